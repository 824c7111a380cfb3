#pragma once

#include <Eigen/Dense>

namespace kmeflow {

/// N particles in R^d at one flow time. Row i of `positions` is particle i.
struct Ensemble {
    Eigen::MatrixXd positions;
    double time = 0.0;

    [[nodiscard]] Eigen::Index size() const noexcept { return positions.rows(); }
    [[nodiscard]] Eigen::Index dim() const noexcept { return positions.cols(); }
    [[nodiscard]] bool all_finite() const { return positions.allFinite(); }
};

[[nodiscard]] Eigen::VectorXd ensemble_mean(const Eigen::MatrixXd& positions);

/// Unbiased ensemble covariance (divisor N-1). Throws DegenerateEnsembleError for N < 2.
[[nodiscard]] Eigen::MatrixXd ensemble_covariance(const Eigen::MatrixXd& positions);
[[nodiscard]] inline Eigen::MatrixXd ensemble_covariance(const Ensemble& e) {
    return ensemble_covariance(e.positions);
}

}  // namespace kmeflow
