#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace kmeflow {

/// Seeded pseudo-random stream.
///
/// The pair (seed, stream) fully determines the output. Normals are produced
/// by inverse-CDF transform of 53-bit uniforms so the sequence does not depend
/// on the standard library's distribution implementations.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }

    /// Independent substream; derived deterministically from (seed, stream, index).
    [[nodiscard]] SeededRng substream(std::uint64_t index) const;

    /// Uniform on the open interval (0, 1).
    double uniform();
    double normal();

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer; used to derive stream seeds.
[[nodiscard]] std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;

/// n x d matrix of iid standard normals (row-major draw order).
[[nodiscard]] Eigen::MatrixXd normal_draws(SeededRng& rng, Eigen::Index n, Eigen::Index d);

/// Standard normal CDF.
[[nodiscard]] double normal_cdf(double x);
/// log Phi(x), accurate far into the lower tail (no underflow below -30).
[[nodiscard]] double log_normal_cdf(double x);
/// Standard normal quantile. Throws std::invalid_argument unless 0 < p < 1.
[[nodiscard]] double normal_inverse_cdf(double p);

/// Unscrambled Sobol sequence with Joe-Kuo direction numbers, d <= 64.
class SobolSampler {
public:
    static constexpr int kMaxDimension = 64;
    static constexpr std::string_view kDirectionSet = "joe-kuo-6.21201";

    /// With skip_first (the default) the all-zero point is dropped and the
    /// first emitted point is (0.5, ..., 0.5).
    explicit SobolSampler(int dimension, bool skip_first = true);

    [[nodiscard]] int dimension() const noexcept { return dimension_; }

    /// Next point in (0,1)^d (or [0,1)^d for the very first point without skipping).
    Eigen::VectorXd next();

private:
    int dimension_;
    std::uint64_t index_ = 0;
    std::vector<std::uint32_t> state_;
    std::vector<std::vector<std::uint32_t>> directions_;
};

/// n samples of N(mean, L L^T) from Sobol points pushed through Phi^{-1}.
/// A non-empty `shift` in [0,1)^d rotates the points modulo 1 first
/// (randomized QMC). Rows are samples. Throws std::invalid_argument for d > 64
/// or shape mismatch.
[[nodiscard]] Eigen::MatrixXd sobol_gaussian(Eigen::Index n, const Eigen::VectorXd& mean,
                                             const Eigen::MatrixXd& cov_chol, const Eigen::VectorXd& shift = {});

/// Uniform random shift for sobol_gaussian.
[[nodiscard]] Eigen::VectorXd random_shift(SeededRng& rng, Eigen::Index d);

}  // namespace kmeflow
