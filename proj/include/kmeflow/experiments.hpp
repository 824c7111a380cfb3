#pragma once

#include "kmeflow/kernels.hpp"
#include "kmeflow/lorenz63.hpp"
#include "kmeflow/models.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace kmeflow {

// Seed streams shared by the experiment drivers.
inline constexpr std::uint64_t kPriorStream = 11;
inline constexpr std::uint64_t kReferenceStream = 12;

struct ToySettings {
    ToyCase toy = ToyCase::GaussToGauss;
    int ensemble_size = 500;
    int n_steps = 50;
    double bandwidth = 5.0;
    double epsilon = 1e-9;
    int grid_points = 801;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    /// Preset kernel and regularisation for each case.
    static ToySettings preset(ToyCase c);
    void validate() const;
};

struct ToyResult {
    Eigen::VectorXd samples_t0;
    Eigen::VectorXd samples_t1;
    Numeric1D target;
    Eigen::VectorXd reference;  ///< ensemble_size iid target draws
    double mean = 0.0;
    double var = 0.0;  ///< unbiased
    double w2 = 0.0;   ///< samples_t1 vs reference
};

/// Prior points are randomly shifted Sobol points; the seed sets the shift
/// and the reference draws.
[[nodiscard]] ToyResult run_toy(const ToySettings& s);

struct SkewSettings {
    int dim = 1;
    int ensemble_size = 500;
    KernelSpec kernel = KernelSpec::quadratic();
    int n_steps = 50;
    double epsilon = 1e-8;
    int replicates = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

/// RBF bandwidth used for the skew experiment when none is given.
[[nodiscard]] double skew_default_bandwidth(int dim);

struct SkewResult {
    std::vector<double> w2;  ///< one per replicate
    double w2_mean = 0.0;
    double w2_stderr = 0.0;
    Eigen::VectorXd first_component;  ///< first coordinate of replicate 0's output
};

[[nodiscard]] SkewResult run_skew(const SkewSettings& s);

struct SweepSettings {
    std::vector<double> bandwidths;
    int dim = 10;
    int ensemble_size = 250;
    int n_steps = 50;
    double epsilon = 1e-5;
    int replicates = 10;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

struct SweepRow {
    double bandwidth = 0.0;
    double w2_mean = 0.0;
    double w2_stderr = 0.0;
};

/// n points evenly spaced in log between lo and hi (inclusive).
[[nodiscard]] std::vector<double> log_grid(double lo, double hi, int n);
/// Sorted unique values; logs a warning when duplicates were dropped.
[[nodiscard]] std::vector<double> dedupe_bandwidths(std::vector<double> values);

/// One row per distinct bandwidth, in increasing order.
[[nodiscard]] std::vector<SweepRow> run_bandwidth_sweep(const SweepSettings& s);

struct LorenzGrid {
    AssimilationScenario base;
    std::vector<AssimilationMethod> methods{AssimilationMethod::EnKF, AssimilationMethod::KME,
                                            AssimilationMethod::KMEKalman};
    std::vector<int> ensemble_sizes{100, 200, 300, 400, 500};

    void validate() const;
};

struct LorenzCell {
    AssimilationMethod method{};
    int ensemble_size = 0;
    AssimilationResult result;
};

/// Every (method, N) pair in grid order. All cells share the seed, so
/// replicate r sees the same observations everywhere.
[[nodiscard]] std::vector<LorenzCell> run_lorenz_grid(const LorenzGrid& grid);

/// Mean and standard error of the mean.
[[nodiscard]] std::pair<double, double> mean_and_stderr(const std::vector<double>& xs);

}  // namespace kmeflow
