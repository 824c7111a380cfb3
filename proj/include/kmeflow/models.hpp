#pragma once

#include "kmeflow/baselines.hpp"
#include "kmeflow/flow.hpp"
#include "kmeflow/sampling.hpp"

#include <Eigen/Dense>

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace kmeflow {

struct GaussianComponents {
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;

    /// Throws std::invalid_argument unless weights are positive and sum to 1
    /// (within 1e-12) and every covariance is SPD with matching dimension.
    void validate() const;
    [[nodiscard]] Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
    [[nodiscard]] double logpdf(const Eigen::VectorXd& x) const;
};

/// Prior distribution pi_0: a Gaussian or a Gaussian mixture.
class PriorSpec {
public:
    static PriorSpec gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov);
    static PriorSpec mixture(GaussianComponents components);

    [[nodiscard]] bool is_gaussian() const noexcept { return !mixture_; }
    [[nodiscard]] const GaussianComponents& components() const noexcept { return components_; }
    [[nodiscard]] Eigen::Index dim() const { return components_.dim(); }
    [[nodiscard]] double logpdf(const Eigen::VectorXd& x) const { return components_.logpdf(x); }

    /// n quasi-random samples (rows). Gaussian: Sobol points through Phi^{-1};
    /// mixture: per-component Sobol blocks with largest-remainder counts.
    [[nodiscard]] Eigen::MatrixXd sample(Eigen::Index n) const;
    /// Same construction with every component's Sobol points rotated by
    /// one random shift drawn from rng.
    [[nodiscard]] Eigen::MatrixXd sample(Eigen::Index n, SeededRng& rng) const;

private:
    [[nodiscard]] Eigen::MatrixXd sample_with_shift(Eigen::Index n, const Eigen::VectorXd& shift) const;

    PriorSpec(GaussianComponents c, bool mixture) : components_(std::move(c)), mixture_(mixture) {}

    GaussianComponents components_;
    bool mixture_;
};

struct AnalyticGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
struct AnalyticMixture {
    GaussianComponents components;
};
/// Standard skew-normal with shape parameter; describes the first marginal.
struct SkewNormal1D {
    double shape;
};
/// Tabulated density on a uniform grid.
struct Numeric1D {
    Eigen::VectorXd grid;
    Eigen::VectorXd pdf;
};
using ReferenceTarget = std::variant<AnalyticGaussian, AnalyticMixture, SkewNormal1D, Numeric1D>;

/// Density of the first marginal of the reference.
[[nodiscard]] double reference_pdf_1d(const ReferenceTarget& ref, double x);
/// n iid draws from the first marginal of the reference.
[[nodiscard]] Eigen::VectorXd sample_reference_1d(const ReferenceTarget& ref, Eigen::Index n, SeededRng& rng);

/// Bayesian problem: prior, likelihood, optional Gaussian structure and reference.
struct InferenceProblem {
    std::string name;
    PriorSpec prior;
    NegLogLikelihood nll;
    std::optional<GaussianObservationModel> gaussian_structure;
    std::optional<ReferenceTarget> reference;

    [[nodiscard]] Eigen::Index dim() const { return prior.dim(); }
    /// When Gaussian structure is present, nll must match its quadratic form
    /// within 1e-10 at random points; throws std::invalid_argument otherwise.
    void validate() const;
};

/// log of Z_t = int exp(-t h) dpi_0 for a 1D problem, by adaptive Gauss-Kronrod
/// on the prior window (mean +- 10 sd per component). Throws NumericalError if
/// the absolute tolerance on Z is not reached.
[[nodiscard]] double log_normalizer(const InferenceProblem& problem, double t, double tol = 1e-10);

/// Integration window(s) used by log_normalizer: disjoint, sorted intervals.
[[nodiscard]] std::vector<std::pair<double, double>> quadrature_windows(const PriorSpec& prior);

/// Posterior density exp(-h) pi_0 / Z_1 of a 1D problem. Z_1 is computed on
/// first use, exactly once even under concurrent callers.
class TargetDensity1D {
public:
    explicit TargetDensity1D(InferenceProblem problem, double tol = 1e-10);

    [[nodiscard]] double pdf(double x) const;
    [[nodiscard]] double log_normalizer() const;
    /// Tabulated density on `points` uniform nodes spanning the quadrature window.
    [[nodiscard]] Numeric1D tabulate(int points = 4001) const;

private:
    InferenceProblem problem_;
    double tol_;
    mutable std::once_flag once_;
    mutable double log_z_ = 0.0;
};

// Likelihoods and densities.

/// -log(2 Phi(gamma . x)), stable in the lower tail.
[[nodiscard]] double skew_nll(const Eigen::VectorXd& gamma, const Eigen::VectorXd& x);
/// (3 - x^2)^2 for scalar x.
[[nodiscard]] double double_well_nll(double x);
/// -log sum_k w_k N(x; m_k, C_k)
[[nodiscard]] double mixture_nll(const GaussianComponents& mixture, const Eigen::VectorXd& x);
[[nodiscard]] double gaussian_nll(const GaussianObservationModel& model, const Eigen::VectorXd& x);
[[nodiscard]] double gaussian_logpdf(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                     const Eigen::VectorXd& x);
[[nodiscard]] double prior_logpdf(const PriorSpec& prior, const Eigen::VectorXd& x);

/// Standard skew-normal density 2 phi(x) Phi(shape x).
[[nodiscard]] double skew_normal_pdf(double x, double shape);
/// Two-normal construction: delta |Z0| + sqrt(1 - delta^2) Z1.
[[nodiscard]] Eigen::VectorXd sample_skew_normal_1d(double shape, Eigen::Index n, SeededRng& rng);

// Named presets.

enum class ToyCase { GaussToGauss, MixtureToMixture, GaussToMixture };

[[nodiscard]] std::optional<ToyCase> parse_toy_case(std::string_view name);
[[nodiscard]] std::string_view toy_case_name(ToyCase c);

/// Prior N(4,1) / mixture 1/2 N(4,1) + 1/2 N(-4,1) / N(0.5,1) with the matching likelihood.
[[nodiscard]] InferenceProblem make_toy_problem(ToyCase c);
/// Prior N(0, I_d), h(x) = -log(2 Phi(gamma . x)) with gamma = (-2, 0, ..., 0).
[[nodiscard]] InferenceProblem make_skew_problem(int d);
/// Prior N(1, I_d), h(x) = x.x / 2; posterior N(1/2, I_d / 2).
[[nodiscard]] InferenceProblem make_isotropic_gaussian_problem(int d);

}  // namespace kmeflow
