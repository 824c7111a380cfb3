#pragma once

#include "kmeflow/kernels.hpp"

#include <Eigen/Dense>

namespace kmeflow {

struct MomentSummary {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov_unbiased;  ///< divisor N - 1
    Eigen::MatrixXd cov_biased;    ///< divisor N
};

/// Throws DegenerateEnsembleError for fewer than 2 rows.
[[nodiscard]] MomentSummary moments(const Eigen::MatrixXd& xs);

/// Biased (V-statistic) squared MMD between the empirical measures of the rows
/// of xs and ys. Symmetric in its arguments bit for bit; never negative.
[[nodiscard]] double mmd2(const KernelSpec& k, const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys);

/// Exact 2-Wasserstein distance between two equal-size, equally weighted
/// samples on the line. Throws std::invalid_argument on a size mismatch.
[[nodiscard]] double w2_1d(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys);

/// Mean over coordinates of the per-coordinate root-mean-square error.
[[nodiscard]] double rmse_spacetime(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& observations);

/// Sample skewness m3 / m2^{3/2} (biased moments).
[[nodiscard]] double skewness(const Eigen::VectorXd& xs);

}  // namespace kmeflow
