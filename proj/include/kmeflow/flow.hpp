#pragma once

#include "kmeflow/baselines.hpp"
#include "kmeflow/ensemble.hpp"
#include "kmeflow/kernels.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <ostream>
#include <variant>

namespace kmeflow {

/// Negative log-likelihood h: R^d -> R.
using NegLogLikelihood = std::function<double(const Eigen::VectorXd&)>;

struct EnsembleCovariancePreconditioner {};
struct IdentityPreconditioner {};
struct FixedPreconditioner {
    Eigen::MatrixXd matrix;
};
/// Choice of the symmetric positive definite matrix C_t that scales the drift.
using Preconditioner = std::variant<EnsembleCovariancePreconditioner, IdentityPreconditioner, FixedPreconditioner>;

struct NoBaseline {};
/// Kalman-Bucy velocity as baseline v0 ("Kalman-adjusted" dynamics).
struct KalmanBucyBaseline {
    GaussianObservationModel model;
};
using Baseline = std::variant<NoBaseline, KalmanBucyBaseline>;

struct FlowConfig {
    int n_steps = 50;
    double epsilon = 1e-9;
    Preconditioner preconditioner = EnsembleCovariancePreconditioner{};
    Baseline baseline = NoBaseline{};
    /// Particle speed above which a step is declared divergent.
    double max_speed = 1e6;
    /// Workers used inside a step; results are identical for every value.
    unsigned threads = 1;

    /// Throws std::invalid_argument when any invariant is violated.
    void validate() const;
};

/// Per-step diagnostics.
struct FlowStep {
    int step = 0;
    Eigen::VectorXd alpha;
    double drift_norm = 0.0;     ///< max_i |v_i| of the kernel drift
    double drift_l2 = 0.0;       ///< sqrt(mean_i |v_i|^2) of the kernel drift
    double baseline_norm = 0.0;  ///< max_i |v0_i|
    double residual = 0.0;       ///< |(1/N)(G + eps I) alpha - f|_2
    double max_alpha = 0.0;
};

/// CSV header/row for streaming FlowStep diagnostics.
void write_flow_step_header(std::ostream& os);
void write_flow_step_row(std::ostream& os, const FlowStep& s);

/// Kernel values and gradients between all particle pairs at one flow time.
///
/// grad(l, i) denotes grad_x k(X^l, X^i), the gradient of k(., X^i) at X^l.
/// Those gradients yield the Gram operator, the correction vector and the
/// particle drift. For the RBF kernel they follow from the kernel matrix and
/// the positions, so only the N x N kernel matrix is stored; other kernels
/// keep an (N*d) x N table.
class GradientTable {
public:
    GradientTable(const Eigen::MatrixXd& positions, const KernelSpec& k, unsigned threads = 1);

    [[nodiscard]] Eigen::Index size() const noexcept { return n_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return d_; }
    /// [k(X^i, X^j)]
    [[nodiscard]] const Eigen::MatrixXd& kernel_matrix() const noexcept { return kernel_; }
    /// grad_x k(X^l, X^i)
    [[nodiscard]] Eigen::VectorXd gradient(Eigen::Index l, Eigen::Index i) const;

    /// G_ij = (1/N) sum_l grad(l, i) . C grad(l, j); exactly symmetric.
    [[nodiscard]] Eigen::MatrixXd gram(const Eigen::MatrixXd& C) const;
    /// Empirical covariance between the kernel features and h.
    [[nodiscard]] Eigen::VectorXd h_vector(const Eigen::VectorXd& h_values) const;
    /// (1/N) sum_j grad(j, i) . v0(X^j)
    [[nodiscard]] Eigen::VectorXd correction(const Eigen::MatrixXd& v0_values) const;
    /// Kernel drift -(1/N) C sum_j alpha_j grad(i, j), one row per particle.
    [[nodiscard]] Eigen::MatrixXd drift(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& C) const;

private:
    Eigen::Index n_;
    Eigen::Index d_;
    double inv_s2_ = 0.0;      // 1/sigma^2 for the RBF kernel, 0 otherwise
    unsigned threads_;
    Eigen::MatrixXd points_;   // d x N, column j = X^j
    Eigen::MatrixXd kernel_;   // N x N
    Eigen::MatrixXd table_;    // (N*d) x N, empty for the RBF kernel
};

[[nodiscard]] Eigen::MatrixXd assemble_gram(const Ensemble& e, const KernelSpec& k, const Eigen::MatrixXd& C);
/// Throws LikelihoodError naming the first non-finite entry.
[[nodiscard]] Eigen::VectorXd assemble_h_vector(const Ensemble& e, const KernelSpec& k,
                                                const Eigen::VectorXd& h_values);
[[nodiscard]] Eigen::VectorXd assemble_correction_vector(const Ensemble& e, const KernelSpec& k,
                                                         const Eigen::MatrixXd& v0_values);

/// alpha = N (G + eps I)^{-1} f via Cholesky, with an LDL^T fallback.
/// Throws NumericalError if no finite solution is obtained.
[[nodiscard]] Eigen::VectorXd solve_weights(const Eigen::MatrixXd& G, const Eigen::VectorXd& f, double epsilon);
/// |(1/N)(G + eps I) alpha - f|_2
[[nodiscard]] double weight_residual(const Eigen::MatrixXd& G, const Eigen::VectorXd& f, double epsilon,
                                     const Eigen::VectorXd& alpha);

/// Preconditioner matrix for the current ensemble.
[[nodiscard]] Eigen::MatrixXd preconditioner_matrix(const Preconditioner& p, const Eigen::MatrixXd& positions);

struct StepResult {
    Ensemble ensemble;
    FlowStep diagnostics;
};

/// One forward-Euler step of the interacting particle system.
[[nodiscard]] StepResult flow_step(const Ensemble& e, const KernelSpec& k, const FlowConfig& cfg,
                                   const NegLogLikelihood& h, double dt, int step_index = 0);

using FlowObserver = std::function<void(const FlowStep&)>;

/// Transports prior samples over flow time [0,1] in cfg.n_steps Euler steps.
[[nodiscard]] Ensemble run_flow(const Eigen::MatrixXd& prior_samples, const KernelSpec& k, const FlowConfig& cfg,
                                const NegLogLikelihood& h, const FlowObserver& observer = {});

}  // namespace kmeflow
