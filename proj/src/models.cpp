#include "kmeflow/models.hpp"

#include "kmeflow/error.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace kmeflow {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kWindowHalfWidth = 10.0;  // prior standard deviations

double log_sum_exp(const std::vector<double>& terms) {
    const double top = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(top)) return top;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    return top + std::log(acc);
}

}  // namespace

void GaussianComponents::validate() const {
    if (weights.empty()) throw std::invalid_argument("Gaussian mixture needs at least one component");
    if (means.size() != weights.size() || covs.size() != weights.size()) {
        throw std::invalid_argument("mixture weights, means and covariances differ in length");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw std::invalid_argument("mixture weights must be positive");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
    const Eigen::Index d = means.front().size();
    if (d < 1) throw std::invalid_argument("Gaussian components need dimension >= 1");
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (means[k].size() != d || covs[k].rows() != d || covs[k].cols() != d) {
            throw std::invalid_argument("mixture components have inconsistent dimensions");
        }
        if ((covs[k] - covs[k].transpose()).cwiseAbs().maxCoeff() > 1e-12) {
            throw std::invalid_argument("covariance matrices must be symmetric");
        }
        Eigen::LLT<Eigen::MatrixXd> llt(covs[k]);
        if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance matrices must be positive definite");
    }
}

double gaussian_logpdf(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const Eigen::VectorXd& x) {
    if (x.size() != mean.size()) throw std::invalid_argument("gaussian_logpdf: dimension mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("gaussian_logpdf: covariance is not SPD");
    const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * z.squaredNorm() - 0.5 * log_det - static_cast<double>(x.size()) * kHalfLog2Pi;
}

double GaussianComponents::logpdf(const Eigen::VectorXd& x) const {
    std::vector<double> terms(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
        terms[k] = std::log(weights[k]) + gaussian_logpdf(means[k], covs[k], x);
    }
    return log_sum_exp(terms);
}

PriorSpec PriorSpec::gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    GaussianComponents c{{1.0}, {std::move(mean)}, {std::move(cov)}};
    c.validate();
    return PriorSpec(std::move(c), false);
}

PriorSpec PriorSpec::mixture(GaussianComponents components) {
    components.validate();
    return PriorSpec(std::move(components), true);
}

Eigen::MatrixXd PriorSpec::sample(Eigen::Index n) const { return sample_with_shift(n, {}); }

Eigen::MatrixXd PriorSpec::sample(Eigen::Index n, SeededRng& rng) const {
    return sample_with_shift(n, random_shift(rng, dim()));
}

Eigen::MatrixXd PriorSpec::sample_with_shift(Eigen::Index n, const Eigen::VectorXd& shift) const {
    if (n < 1) throw std::invalid_argument("prior sample size must be >= 1");
    const std::size_t k = components_.weights.size();
    // Largest-remainder allocation of the n samples over the components.
    std::vector<Eigen::Index> counts(k);
    std::vector<std::pair<double, std::size_t>> remainders(k);
    Eigen::Index assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const double exact = components_.weights[c] * static_cast<double>(n);
        counts[c] = static_cast<Eigen::Index>(std::floor(exact));
        remainders[c] = {exact - std::floor(exact), c};
        assigned += counts[c];
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % k].second];

    Eigen::MatrixXd out(n, dim());
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        const Eigen::MatrixXd chol = components_.covs[c].llt().matrixL();
        out.middleRows(row, counts[c]) = sobol_gaussian(counts[c], components_.means[c], chol, shift);
        row += counts[c];
    }
    return out;
}

double reference_pdf_1d(const ReferenceTarget& ref, double x) {
    if (const auto* g = std::get_if<AnalyticGaussian>(&ref)) {
        const double sd = std::sqrt(g->cov(0, 0));
        const double z = (x - g->mean[0]) / sd;
        return std::exp(-0.5 * z * z - kHalfLog2Pi) / sd;
    }
    if (const auto* m = std::get_if<AnalyticMixture>(&ref)) {
        double total = 0.0;
        for (std::size_t k = 0; k < m->components.weights.size(); ++k) {
            const double sd = std::sqrt(m->components.covs[k](0, 0));
            const double z = (x - m->components.means[k][0]) / sd;
            total += m->components.weights[k] * std::exp(-0.5 * z * z - kHalfLog2Pi) / sd;
        }
        return total;
    }
    if (const auto* s = std::get_if<SkewNormal1D>(&ref)) return skew_normal_pdf(x, s->shape);
    const auto& table = std::get<Numeric1D>(ref);
    const Eigen::Index n = table.grid.size();
    if (x <= table.grid[0] || x >= table.grid[n - 1]) return 0.0;
    const double h = (table.grid[n - 1] - table.grid[0]) / static_cast<double>(n - 1);
    const auto i = static_cast<Eigen::Index>((x - table.grid[0]) / h);
    const Eigen::Index j = std::min(i, n - 2);
    const double w = (x - table.grid[j]) / h;
    return (1.0 - w) * table.pdf[j] + w * table.pdf[j + 1];
}

namespace {

// Inverse-CDF sampling from a piecewise-linear density on a uniform grid.
Eigen::VectorXd sample_tabulated(const Numeric1D& table, Eigen::Index n, SeededRng& rng) {
    const Eigen::Index m = table.grid.size();
    std::vector<double> cdf(static_cast<std::size_t>(m), 0.0);
    for (Eigen::Index i = 1; i < m; ++i) {
        const double h = table.grid[i] - table.grid[i - 1];
        cdf[i] = cdf[i - 1] + 0.5 * h * (table.pdf[i] + table.pdf[i - 1]);
    }
    const double total = cdf.back();
    Eigen::VectorXd out(n);
    for (Eigen::Index s = 0; s < n; ++s) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const auto hi = static_cast<Eigen::Index>(std::min<std::ptrdiff_t>(it - cdf.begin(), m - 1));
        const Eigen::Index lo = std::max<Eigen::Index>(hi - 1, 0);
        // Within the cell the CDF is p0 t + (p1 - p0) t^2 / (2h); solve for t in [0, h].
        const double h = table.grid[hi] - table.grid[lo];
        const double p0 = table.pdf[lo];
        const double slope = h > 0.0 ? (table.pdf[hi] - p0) / h : 0.0;
        const double target = std::max(u - cdf[lo], 0.0);
        double t = 0.0;
        if (target <= 0.0) {
            t = 0.0;
        } else if (std::abs(slope) * h > 1e-12 * std::max(p0, 1e-300)) {
            // Stable root of (slope/2) t^2 + p0 t - target = 0.
            const double disc = std::max(p0 * p0 + 2.0 * slope * target, 0.0);
            t = 2.0 * target / (p0 + std::sqrt(disc));
        } else if (p0 > 0.0) {
            t = target / p0;
        }
        out[s] = table.grid[lo] + std::clamp(t, 0.0, h);
    }
    return out;
}

}  // namespace

Eigen::VectorXd sample_reference_1d(const ReferenceTarget& ref, Eigen::Index n, SeededRng& rng) {
    if (const auto* g = std::get_if<AnalyticGaussian>(&ref)) {
        const double sd = std::sqrt(g->cov(0, 0));
        Eigen::VectorXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) out[i] = g->mean[0] + sd * rng.normal();
        return out;
    }
    if (const auto* m = std::get_if<AnalyticMixture>(&ref)) {
        const auto& w = m->components.weights;
        Eigen::VectorXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double u = rng.uniform();
            std::size_t k = 0;
            while (k + 1 < w.size() && u > w[k]) u -= w[k++];
            out[i] = m->components.means[k][0] + std::sqrt(m->components.covs[k](0, 0)) * rng.normal();
        }
        return out;
    }
    if (const auto* s = std::get_if<SkewNormal1D>(&ref)) return sample_skew_normal_1d(s->shape, n, rng);
    return sample_tabulated(std::get<Numeric1D>(ref), n, rng);
}

void InferenceProblem::validate() const {
    if (!nll) throw std::invalid_argument("inference problem '" + name + "' has no likelihood");
    if (!gaussian_structure) return;
    if (gaussian_structure->state_dim() != dim()) {
        throw std::invalid_argument("Gaussian structure of '" + name + "' does not match the prior dimension");
    }
    SeededRng rng(0x5eed, 0);
    for (int trial = 0; trial < 8; ++trial) {
        Eigen::VectorXd x(dim());
        for (Eigen::Index a = 0; a < x.size(); ++a) x[a] = 3.0 * rng.normal();
        const double expected = kmeflow::nll(*gaussian_structure, x);
        if (std::abs(nll(x) - expected) > 1e-10 * (1.0 + std::abs(expected))) {
            throw std::invalid_argument("likelihood of '" + name + "' disagrees with its Gaussian structure");
        }
    }
}

std::vector<std::pair<double, double>> quadrature_windows(const PriorSpec& prior) {
    if (prior.dim() != 1) throw std::invalid_argument("quadrature is only available for 1D problems");
    const auto& c = prior.components();
    std::vector<std::pair<double, double>> windows;
    for (std::size_t k = 0; k < c.weights.size(); ++k) {
        const double sd = std::sqrt(c.covs[k](0, 0));
        windows.emplace_back(c.means[k][0] - kWindowHalfWidth * sd, c.means[k][0] + kWindowHalfWidth * sd);
    }
    std::sort(windows.begin(), windows.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& w : windows) {
        if (!merged.empty() && w.first <= merged.back().second) {
            merged.back().second = std::max(merged.back().second, w.second);
        } else {
            merged.push_back(w);
        }
    }
    return merged;
}

double log_normalizer(const InferenceProblem& problem, double t, double tol) {
    if (problem.dim() != 1) throw std::invalid_argument("log_normalizer is only available for 1D problems");
    if (!(tol > 0.0)) throw std::invalid_argument("log_normalizer: tolerance must be positive");
    if (t == 0.0) return 0.0;
    auto integrand = [&](double x) {
        const Eigen::VectorXd p = Eigen::VectorXd::Constant(1, x);
        return std::exp(problem.prior.logpdf(p) - t * problem.nll(p));
    };
    double z = 0.0;
    double error = 0.0;
    for (const auto& [a, b] : quadrature_windows(problem.prior)) {
        double piece_error = 0.0;
        z += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, a, b, 20, tol, &piece_error);
        error += piece_error;
    }
    if (!(error <= tol) || !std::isfinite(z)) {
        throw NumericalError("quadrature for the normalizing constant reached only " + std::to_string(error) +
                             " (requested " + std::to_string(tol) + ")");
    }
    if (!(z > 0.0)) throw NumericalError("normalizing constant is zero on the quadrature window");
    return std::log(z);
}

TargetDensity1D::TargetDensity1D(InferenceProblem problem, double tol) : problem_(std::move(problem)), tol_(tol) {
    if (problem_.dim() != 1) throw std::invalid_argument("TargetDensity1D needs a 1D problem");
}

double TargetDensity1D::log_normalizer() const {
    std::call_once(once_, [this] { log_z_ = kmeflow::log_normalizer(problem_, 1.0, tol_); });
    return log_z_;
}

double TargetDensity1D::pdf(double x) const {
    const Eigen::VectorXd p = Eigen::VectorXd::Constant(1, x);
    return std::exp(problem_.prior.logpdf(p) - problem_.nll(p) - log_normalizer());
}

Numeric1D TargetDensity1D::tabulate(int points) const {
    if (points < 2) throw std::invalid_argument("tabulate needs at least 2 points");
    const auto windows = quadrature_windows(problem_.prior);
    const double lo = windows.front().first;
    const double hi = windows.back().second;
    Numeric1D table{Eigen::VectorXd::LinSpaced(points, lo, hi), Eigen::VectorXd(points)};
    for (int i = 0; i < points; ++i) table.pdf[i] = pdf(table.grid[i]);
    return table;
}

double skew_nll(const Eigen::VectorXd& gamma, const Eigen::VectorXd& x) {
    if (gamma.size() != x.size()) throw std::invalid_argument("skew_nll: dimension mismatch");
    return -std::numbers::ln2 - log_normal_cdf(gamma.dot(x));
}

double double_well_nll(double x) {
    const double r = 3.0 - x * x;
    return r * r;
}

double mixture_nll(const GaussianComponents& mixture, const Eigen::VectorXd& x) { return -mixture.logpdf(x); }

double gaussian_nll(const GaussianObservationModel& model, const Eigen::VectorXd& x) { return nll(model, x); }

double prior_logpdf(const PriorSpec& prior, const Eigen::VectorXd& x) { return prior.logpdf(x); }

double skew_normal_pdf(double x, double shape) {
    return 2.0 * std::exp(-0.5 * x * x - kHalfLog2Pi) * normal_cdf(shape * x);
}

Eigen::VectorXd sample_skew_normal_1d(double shape, Eigen::Index n, SeededRng& rng) {
    if (n < 1) throw std::invalid_argument("sample_skew_normal_1d: n must be >= 1");
    const double delta = shape / std::sqrt(1.0 + shape * shape);
    const double rest = std::sqrt(1.0 - delta * delta);
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double z0 = rng.normal();
        const double z1 = rng.normal();
        out[i] = delta * std::abs(z0) + rest * z1;
    }
    return out;
}

std::optional<ToyCase> parse_toy_case(std::string_view name) {
    if (name == "gauss-to-gauss") return ToyCase::GaussToGauss;
    if (name == "mixture-to-mixture") return ToyCase::MixtureToMixture;
    if (name == "gauss-to-mixture") return ToyCase::GaussToMixture;
    return std::nullopt;
}

std::string_view toy_case_name(ToyCase c) {
    switch (c) {
        case ToyCase::GaussToGauss: return "gauss-to-gauss";
        case ToyCase::MixtureToMixture: return "mixture-to-mixture";
        case ToyCase::GaussToMixture: return "gauss-to-mixture";
    }
    return "unknown";
}

namespace {

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }
Eigen::MatrixXd scalar_matrix(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

}  // namespace

InferenceProblem make_toy_problem(ToyCase c) {
    // h(x) = x^2/2 is the Gaussian likelihood with H = 1, R = 1, beta = 0.
    const GaussianObservationModel half_square(scalar_matrix(1.0), scalar_matrix(1.0), scalar(0.0));
    auto half_square_nll = [](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm(); };
    InferenceProblem p{std::string(toy_case_name(c)), PriorSpec::gaussian(scalar(4.0), scalar_matrix(1.0)),
                       half_square_nll, half_square, std::nullopt};
    switch (c) {
        case ToyCase::GaussToGauss:
            p.reference = AnalyticGaussian{scalar(2.0), scalar_matrix(0.5)};
            break;
        case ToyCase::MixtureToMixture:
            p.prior = PriorSpec::mixture({{0.5, 0.5}, {scalar(4.0), scalar(-4.0)}, {scalar_matrix(1.0), scalar_matrix(1.0)}});
            p.reference =
                AnalyticMixture{{{0.5, 0.5}, {scalar(2.0), scalar(-2.0)}, {scalar_matrix(0.5), scalar_matrix(0.5)}}};
            break;
        case ToyCase::GaussToMixture: {
            p.prior = PriorSpec::gaussian(scalar(0.5), scalar_matrix(1.0));
            p.nll = [](const Eigen::VectorXd& x) { return double_well_nll(x[0]); };
            p.gaussian_structure.reset();
            const TargetDensity1D target(p);
            p.reference = target.tabulate();
            break;
        }
    }
    p.validate();
    return p;
}

InferenceProblem make_skew_problem(int d) {
    if (d < 1) throw std::invalid_argument("skew problem dimension must be >= 1");
    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(d);
    gamma[0] = -2.0;
    InferenceProblem p{"skew-normal", PriorSpec::gaussian(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d)),
                       [gamma](const Eigen::VectorXd& x) { return skew_nll(gamma, x); }, std::nullopt,
                       SkewNormal1D{-2.0}};
    p.validate();
    return p;
}

InferenceProblem make_isotropic_gaussian_problem(int d) {
    if (d < 1) throw std::invalid_argument("problem dimension must be >= 1");
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    InferenceProblem p{"isotropic-gaussian", PriorSpec::gaussian(Eigen::VectorXd::Ones(d), eye),
                       [](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm(); },
                       GaussianObservationModel(eye, eye, Eigen::VectorXd::Zero(d)),
                       AnalyticGaussian{Eigen::VectorXd::Constant(d, 0.5), 0.5 * eye}};
    p.validate();
    return p;
}

}  // namespace kmeflow
