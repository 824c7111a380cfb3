#include "kmeflow/sampling.hpp"

#include "sobol_directions.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace kmeflow {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(mix_seed(seed, stream)) {}

SeededRng SeededRng::substream(std::uint64_t index) const { return SeededRng(seed_, mix_seed(stream_, index)); }

double SeededRng::uniform() {
    // 53 random bits, centred in their cell: never exactly 0 or 1.
    const std::uint64_t bits = engine_() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double SeededRng::normal() { return normal_inverse_cdf(uniform()); }

Eigen::MatrixXd normal_draws(SeededRng& rng, Eigen::Index n, Eigen::Index d) {
    Eigen::MatrixXd out(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index a = 0; a < d; ++a) out(i, a) = rng.normal();
    return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double log_normal_cdf(double x) {
    if (x > -30.0) {
        if (x > 5.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
        return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
    }
    // Mills-ratio asymptotic series; at |x| >= 30 the truncation error is below 1e-17.
    const double inv_x2 = 1.0 / (x * x);
    double term = 1.0;
    double series = 1.0;
    for (int k = 1; k <= 6; ++k) {
        term *= -(2.0 * k - 1.0) * inv_x2;
        series += term;
    }
    constexpr double half_log_2pi = 0.91893853320467274178;
    return -0.5 * x * x - std::log(-x) - half_log_2pi + std::log(series);
}

namespace {

// Acklam's rational approximation for the lower half, p in (0, 0.5].
double acklam_lower(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_inverse_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("normal_inverse_cdf requires 0 < p < 1, got " + std::to_string(p));
    }
    if (p == 0.5) return 0.0;
    // Upper half by symmetry: 1 - p is exact there, lower-tail refinement keeps relative accuracy.
    const bool upper = p > 0.5;
    const double lower_p = upper ? 1.0 - p : p;
    double x = acklam_lower(lower_p);
    // One Halley step against the erfc-based CDF.
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - lower_p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return upper ? -x : x;
}

SobolSampler::SobolSampler(int dimension, bool skip_first) : dimension_(dimension) {
    if (dimension < 1 || dimension > kMaxDimension) {
        throw std::invalid_argument("Sobol dimension must be in [1, 64], got " + std::to_string(dimension));
    }
    constexpr int bits = 32;
    directions_.assign(static_cast<std::size_t>(dimension), std::vector<std::uint32_t>(bits));
    for (int k = 0; k < bits; ++k) directions_[0][k] = 1u << (bits - 1 - k);
    for (int j = 1; j < dimension; ++j) {
        const auto& poly = detail::kJoeKuoDirections[static_cast<std::size_t>(j - 1)];
        const int s = static_cast<int>(poly.degree);
        std::vector<std::uint32_t> m(bits);
        for (int k = 0; k < s; ++k) m[k] = poly.initial[static_cast<std::size_t>(k)];
        for (int k = s; k < bits; ++k) {
            std::uint32_t value = m[k - s] ^ (m[k - s] << s);
            for (int l = 1; l < s; ++l) {
                if ((poly.coefficients >> (s - 1 - l)) & 1u) value ^= m[k - l] << l;
            }
            m[k] = value;
        }
        for (int k = 0; k < bits; ++k) directions_[j][k] = m[k] << (bits - 1 - k);
    }
    state_.assign(static_cast<std::size_t>(dimension), 0u);
    if (skip_first) index_ = 1;
    if (skip_first) {
        // Gray-code step from index 0 to index 1 flips direction 0.
        for (int j = 0; j < dimension; ++j) state_[j] = directions_[j][0];
    }
}

Eigen::VectorXd SobolSampler::next() {
    Eigen::VectorXd point(dimension_);
    for (int j = 0; j < dimension_; ++j) point[j] = static_cast<double>(state_[j]) * 0x1.0p-32;
    // Advance using the Gray code: flip the direction of the lowest zero bit of the index.
    const int c = std::countr_one(index_);
    if (c >= 32) throw std::length_error("Sobol sequence exhausted (2^32 points)");
    for (int j = 0; j < dimension_; ++j) state_[j] ^= directions_[j][c];
    ++index_;
    return point;
}

Eigen::MatrixXd sobol_gaussian(Eigen::Index n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov_chol,
                               const Eigen::VectorXd& shift) {
    const Eigen::Index d = mean.size();
    if (shift.size() != 0 && shift.size() != d) throw std::invalid_argument("sobol_gaussian: shift has the wrong size");
    if (cov_chol.rows() != d || cov_chol.cols() != d) {
        throw std::invalid_argument("sobol_gaussian: Cholesky factor shape does not match the mean");
    }
    if (n < 1) throw std::invalid_argument("sobol_gaussian: need at least one sample");
    SobolSampler sobol(static_cast<int>(d));
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd u = sobol.next();
        for (Eigen::Index a = 0; a < d; ++a) {
            double v = u[a];
            if (shift.size() != 0) {
                v += shift[a];
                v -= std::floor(v);
                v = std::clamp(v, 0x1p-53, 1.0 - 0x1p-53);
            }
            z[a] = normal_inverse_cdf(v);
        }
        out.row(i) = (mean + cov_chol.triangularView<Eigen::Lower>() * z).transpose();
    }
    return out;
}

Eigen::VectorXd random_shift(SeededRng& rng, Eigen::Index d) {
    Eigen::VectorXd s(d);
    for (Eigen::Index a = 0; a < d; ++a) s[a] = rng.uniform();
    return s;
}

}  // namespace kmeflow
