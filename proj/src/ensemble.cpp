#include "kmeflow/ensemble.hpp"

#include "kmeflow/error.hpp"

#include <stdexcept>
#include <string>

namespace kmeflow {

// Both statistics are computed relative to the first particle; the shift is
// exact, so identical particles give exactly zero spread.

Eigen::VectorXd ensemble_mean(const Eigen::MatrixXd& positions) {
    if (positions.rows() < 1) throw DegenerateEnsembleError("mean of an empty ensemble");
    const Eigen::RowVectorXd origin = positions.row(0);
    const Eigen::RowVectorXd shift = (positions.rowwise() - origin).colwise().mean();
    return (origin + shift).transpose();
}

Eigen::MatrixXd ensemble_covariance(const Eigen::MatrixXd& positions) {
    const Eigen::Index n = positions.rows();
    if (n < 2) {
        throw DegenerateEnsembleError("ensemble covariance needs at least 2 particles, got " + std::to_string(n));
    }
    const Eigen::RowVectorXd origin = positions.row(0);
    Eigen::MatrixXd centred = positions.rowwise() - origin;
    const Eigen::RowVectorXd shift = centred.colwise().mean();
    centred.rowwise() -= shift;
    Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n - 1);
    cov = 0.5 * (cov + cov.transpose()).eval();
    return cov;
}

}  // namespace kmeflow
