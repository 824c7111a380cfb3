#pragma once

#include "kmeflow/ensemble.hpp"
#include "kmeflow/flow.hpp"
#include "kmeflow/kernels.hpp"
#include "kmeflow/sampling.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

namespace kmeflow {

struct Lorenz63Params {
    double sigma = 10.0;
    double rho = 28.0;
    double beta_l = 8.0 / 3.0;
    double dt_inner = 0.001;
    double dt_obs = 0.05;
    /// Diagonal of the observation noise covariance.
    Eigen::Vector3d obs_noise_var = Eigen::Vector3d::Constant(0.2);
    /// Diagonal of the per-step forecast noise covariance; 4 dt_inner / 5 when unset.
    std::optional<Eigen::Vector3d> forecast_noise_var;
    int n_cycles = 100;
    Eigen::Vector3d x0{-0.587, -0.563, 16.870};

    [[nodiscard]] Eigen::Vector3d forecast_variance() const {
        return forecast_noise_var.value_or(Eigen::Vector3d::Constant(0.8 * dt_inner));
    }
    /// dt_obs / dt_inner.
    [[nodiscard]] int steps_per_cycle() const;
    /// Throws std::invalid_argument when dt_obs is not a positive integer
    /// multiple of dt_inner or a variance is negative.
    void validate() const;
};

[[nodiscard]] Eigen::Vector3d lorenz_rhs(const Lorenz63Params& p, const Eigen::Vector3d& state);

/// Classical RK4 step. dt = 0 returns the state unchanged; dt < 0 throws
/// std::invalid_argument; a non-finite result throws DivergenceError.
[[nodiscard]] Eigen::Vector3d rk4_step(const Lorenz63Params& p, const Eigen::Vector3d& state, double dt);

struct TruthAndObservations {
    Eigen::MatrixXd truth;         ///< (n_cycles * steps_per_cycle + 1) x 3, row 0 = x0
    Eigen::MatrixXd observations;  ///< n_cycles x 3, row j-1 observes t_j = j dt_obs
};

[[nodiscard]] TruthAndObservations generate_truth_and_observations(const Lorenz63Params& p, SeededRng& rng);

/// Propagates every member over one observation interval: an RK4 step of
/// dt_inner followed by additive Gaussian noise, repeated steps_per_cycle
/// times. Throws DivergenceError when a coordinate is non-finite or a member
/// leaves the ball of radius divergence_threshold.
[[nodiscard]] Ensemble forecast_ensemble(const Lorenz63Params& p, const Ensemble& e, SeededRng& rng,
                                         unsigned threads = 1, double divergence_threshold = 1e3);

enum class AssimilationMethod { EnKF, KME, KMEKalman, ForecastOnly };

[[nodiscard]] std::string_view method_name(AssimilationMethod m);
[[nodiscard]] std::optional<AssimilationMethod> parse_method(std::string_view name);

/// Replaces the cycle likelihood h_j; receives the particle and beta_j.
using CycleLikelihood = std::function<double(const Eigen::VectorXd& x, const Eigen::VectorXd& beta)>;

struct AssimilationScenario {
    Lorenz63Params params;
    AssimilationMethod method = AssimilationMethod::KMEKalman;
    KernelSpec kernel = KernelSpec::rbf(6.0);
    /// Only n_steps, epsilon, max_speed and threads are used; the preconditioner
    /// is the ensemble covariance and the baseline follows the method.
    FlowConfig flow{.n_steps = 50, .epsilon = 5e-11};
    int ensemble_size = 500;
    Eigen::Vector3d prior_var = Eigen::Vector3d::Constant(0.01);
    /// Observation variance assumed by the inference step (R = r I).
    double inference_obs_var = 0.2;
    int n_replicates = 20;
    std::uint64_t seed = 0;
    int max_retries = 5;
    double divergence_threshold = 1e3;
    unsigned threads = 1;
    std::optional<CycleLikelihood> likelihood_override;

    void validate() const;
};

struct ReplicateResult {
    int replicate = 0;
    double rmse = 0.0;
    int retries = 0;
    double wall_time_s = 0.0;
    Eigen::MatrixXd means;         ///< n_cycles x 3 posterior means
    Eigen::MatrixXd observations;  ///< n_cycles x 3
};

struct AssimilationResult {
    std::vector<ReplicateResult> replicates;

    [[nodiscard]] double mean_rmse() const;
    [[nodiscard]] int total_retries() const;
};

/// One replicate. Observations depend on (seed, replicate) only, so every
/// method sees the same data; ensemble noise also depends on the attempt.
/// Throws DivergenceError once max_retries reruns have failed.
[[nodiscard]] ReplicateResult run_replicate(const AssimilationScenario& sc, int replicate);

/// All replicates, in order. Results do not depend on sc.threads.
[[nodiscard]] AssimilationResult run_assimilation(const AssimilationScenario& sc);

}  // namespace kmeflow
