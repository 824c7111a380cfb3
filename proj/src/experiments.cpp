#include "kmeflow/experiments.hpp"

#include "kmeflow/flow.hpp"
#include "kmeflow/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kmeflow {

std::pair<double, double> mean_and_stderr(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_and_stderr: empty input");
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

ToySettings ToySettings::preset(ToyCase c) {
    ToySettings s;
    s.toy = c;
    if (c == ToyCase::GaussToMixture) {
        s.bandwidth = 0.95;
        s.epsilon = 1e-8;
    }
    return s;
}

void ToySettings::validate() const {
    if (ensemble_size < 2) throw std::invalid_argument("ensemble_size must be >= 2");
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (grid_points < 2) throw std::invalid_argument("grid_points must be >= 2");
}

ToyResult run_toy(const ToySettings& s) {
    s.validate();
    const InferenceProblem problem = make_toy_problem(s.toy);
    SeededRng prior_rng(s.seed, kPriorStream);
    SeededRng ref_rng(s.seed, kReferenceStream);

    FlowConfig cfg;
    cfg.n_steps = s.n_steps;
    cfg.epsilon = s.epsilon;
    cfg.threads = s.threads;

    ToyResult r;
    const Eigen::MatrixXd x0 = problem.prior.sample(s.ensemble_size, prior_rng);
    const Ensemble out = run_flow(x0, KernelSpec::rbf(s.bandwidth), cfg, problem.nll);
    r.samples_t0 = x0.col(0);
    r.samples_t1 = out.positions.col(0);
    r.target = TargetDensity1D(problem).tabulate(s.grid_points);
    r.reference = sample_reference_1d(*problem.reference, s.ensemble_size, ref_rng);
    const MomentSummary m = moments(out.positions);
    r.mean = m.mean[0];
    r.var = m.cov_unbiased(0, 0);
    r.w2 = w2_1d(r.samples_t1, r.reference);
    return r;
}

void SkewSettings::validate() const {
    if (dim < 1) throw std::invalid_argument("dimension must be >= 1");
    if (dim > SobolSampler::kMaxDimension) throw std::invalid_argument("dimension exceeds the Sobol table");
    if (ensemble_size < 2) throw std::invalid_argument("ensemble_size must be >= 2");
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
}

double skew_default_bandwidth(int dim) { return std::sqrt(static_cast<double>(dim)); }

SkewResult run_skew(const SkewSettings& s) {
    s.validate();
    const InferenceProblem problem = make_skew_problem(s.dim);
    const double shape = std::get<SkewNormal1D>(*problem.reference).shape;
    FlowConfig cfg;
    cfg.n_steps = s.n_steps;
    cfg.epsilon = s.epsilon;
    cfg.threads = s.threads;

    SkewResult r;
    for (int rep = 0; rep < s.replicates; ++rep) {
        const std::uint64_t rep_seed = mix_seed(s.seed, static_cast<std::uint64_t>(rep));
        SeededRng prior_rng(rep_seed, kPriorStream);
        SeededRng ref_rng(rep_seed, kReferenceStream);
        const Eigen::MatrixXd x0 = problem.prior.sample(s.ensemble_size, prior_rng);
        const Ensemble out = run_flow(x0, s.kernel, cfg, problem.nll);
        const Eigen::VectorXd first = out.positions.col(0);
        r.w2.push_back(w2_1d(first, sample_skew_normal_1d(shape, s.ensemble_size, ref_rng)));
        if (rep == 0) r.first_component = first;
    }
    std::tie(r.w2_mean, r.w2_stderr) = mean_and_stderr(r.w2);
    return r;
}

void SweepSettings::validate() const {
    if (bandwidths.empty()) throw std::invalid_argument("at least one bandwidth is required");
    for (double b : bandwidths) {
        if (!(b > 0.0) || !std::isfinite(b)) throw std::invalid_argument("bandwidths must be positive");
    }
    if (dim < 1 || dim > SobolSampler::kMaxDimension) throw std::invalid_argument("dimension out of range");
    if (ensemble_size < 2) throw std::invalid_argument("ensemble_size must be >= 2");
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
}

std::vector<double> log_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi >= lo) || n < 1) throw std::invalid_argument("log_grid: need 0 < lo <= hi and n >= 1");
    if (n == 1) return {lo};
    std::vector<double> out(static_cast<std::size_t>(n));
    const double a = std::log(lo);
    const double step = (std::log(hi) - a) / (n - 1);
    for (int i = 0; i < n; ++i) out[i] = std::exp(a + step * i);
    out.front() = lo;
    out.back() = hi;
    return out;
}

std::vector<double> dedupe_bandwidths(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const auto before = values.size();
    values.erase(std::unique(values.begin(), values.end()), values.end());
    if (values.size() != before) {
        spdlog::warn("dropped {} duplicated bandwidth value(s)", before - values.size());
    }
    return values;
}

std::vector<SweepRow> run_bandwidth_sweep(const SweepSettings& s) {
    s.validate();
    const InferenceProblem problem = make_isotropic_gaussian_problem(s.dim);
    FlowConfig cfg;
    cfg.n_steps = s.n_steps;
    cfg.epsilon = s.epsilon;
    cfg.threads = s.threads;

    std::vector<SweepRow> rows;
    for (double sigma : dedupe_bandwidths(s.bandwidths)) {
        const KernelSpec k = KernelSpec::rbf(sigma);
        std::vector<double> w2;
        for (int rep = 0; rep < s.replicates; ++rep) {
            const std::uint64_t rep_seed = mix_seed(s.seed, static_cast<std::uint64_t>(rep));
            SeededRng prior_rng(rep_seed, kPriorStream);
            SeededRng ref_rng(rep_seed, kReferenceStream);
            const Eigen::MatrixXd x0 = problem.prior.sample(s.ensemble_size, prior_rng);
            const Ensemble out = run_flow(x0, k, cfg, problem.nll);
            w2.push_back(w2_1d(out.positions.col(0),
                               sample_reference_1d(*problem.reference, s.ensemble_size, ref_rng)));
        }
        const auto [mean, se] = mean_and_stderr(w2);
        rows.push_back({sigma, mean, se});
        spdlog::info("bandwidth {:.4g}: w2 {:.4f} +- {:.4f}", sigma, mean, se);
    }
    return rows;
}

void LorenzGrid::validate() const {
    if (methods.empty()) throw std::invalid_argument("at least one method is required");
    if (ensemble_sizes.empty()) throw std::invalid_argument("at least one ensemble size is required");
    for (int n : ensemble_sizes) {
        if (n < 2) throw std::invalid_argument("ensemble sizes must be >= 2");
    }
    base.validate();
}

std::vector<LorenzCell> run_lorenz_grid(const LorenzGrid& grid) {
    grid.validate();
    std::vector<LorenzCell> cells;
    for (AssimilationMethod m : grid.methods) {
        for (int n : grid.ensemble_sizes) {
            AssimilationScenario sc = grid.base;
            sc.method = m;
            sc.ensemble_size = n;
            LorenzCell cell{m, n, run_assimilation(sc)};
            spdlog::info("{} N={}: mean RMSE {:.4f} ({} retries)", method_name(m), n, cell.result.mean_rmse(),
                         cell.result.total_retries());
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

}  // namespace kmeflow
