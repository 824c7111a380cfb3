#pragma once

#include "kmeflow/ensemble.hpp"
#include "kmeflow/sampling.hpp"

#include <Eigen/Dense>

#include <string_view>

namespace kmeflow {

/// Linear-Gaussian likelihood h(x) = 1/2 (Hx - beta)^T R^{-1} (Hx - beta).
class GaussianObservationModel {
public:
    /// Throws std::invalid_argument on inconsistent shapes or when R is not
    /// symmetric positive definite.
    GaussianObservationModel(Eigen::MatrixXd H, Eigen::MatrixXd R, Eigen::VectorXd beta);

    [[nodiscard]] const Eigen::MatrixXd& H() const noexcept { return H_; }
    [[nodiscard]] const Eigen::MatrixXd& R() const noexcept { return R_; }
    [[nodiscard]] const Eigen::VectorXd& beta() const noexcept { return beta_; }
    [[nodiscard]] const Eigen::MatrixXd& R_inverse() const noexcept { return R_inv_; }
    [[nodiscard]] Eigen::Index state_dim() const noexcept { return H_.cols(); }
    [[nodiscard]] Eigen::Index obs_dim() const noexcept { return H_.rows(); }

    /// Same H and R, new observation.
    [[nodiscard]] GaussianObservationModel with_observation(Eigen::VectorXd beta) const;

private:
    Eigen::MatrixXd H_;
    Eigen::MatrixXd R_;
    Eigen::VectorXd beta_;
    Eigen::MatrixXd R_inv_;
    Eigen::MatrixXd R_chol_;

    friend Ensemble enkf_analysis(const Ensemble&, const GaussianObservationModel&, SeededRng&);
};

[[nodiscard]] double nll(const GaussianObservationModel& model, const Eigen::VectorXd& x);

/// Mean-field Kalman-Bucy velocity -1/2 cov H^T R^{-1} (H (x + mean) - 2 beta).
[[nodiscard]] Eigen::VectorXd kalman_bucy_velocity(const GaussianObservationModel& model, const Eigen::VectorXd& x,
                                                   const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

/// Velocity for every particle (rows), sharing one mean/cov.
[[nodiscard]] Eigen::MatrixXd kalman_bucy_velocities(const GaussianObservationModel& model,
                                                     const Eigen::MatrixXd& positions, const Eigen::VectorXd& mean,
                                                     const Eigen::MatrixXd& cov);

/// Forward-Euler integration of the Kalman-Bucy ODE over t in [0,1], with the
/// ensemble mean and covariance recomputed every step.
[[nodiscard]] Ensemble run_kalman_bucy_flow(const Eigen::MatrixXd& prior_samples,
                                            const GaussianObservationModel& model, int n_steps);

inline constexpr std::string_view kEnkfVariant = "stochastic-perturbed-observations";

/// Perturbed-observation EnKF analysis with the ensemble covariance.
[[nodiscard]] Ensemble enkf_analysis(const Ensemble& forecast, const GaussianObservationModel& model, SeededRng& rng);

}  // namespace kmeflow
