#include "kmeflow/lorenz63.hpp"

#include "kmeflow/baselines.hpp"
#include "kmeflow/error.hpp"
#include "kmeflow/parallel.hpp"
#include "kmeflow/metrics.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kmeflow {

int Lorenz63Params::steps_per_cycle() const {
    return static_cast<int>(std::lround(dt_obs / dt_inner));
}

void Lorenz63Params::validate() const {
    if (!(dt_inner > 0.0) || !(dt_obs > 0.0)) throw std::invalid_argument("Lorenz time steps must be positive");
    const double ratio = dt_obs / dt_inner;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1.0) {
        throw std::invalid_argument("dt_obs must be a positive integer multiple of dt_inner");
    }
    if (n_cycles < 1) throw std::invalid_argument("n_cycles must be >= 1");
    if (!(obs_noise_var.array() >= 0.0).all() || !(forecast_variance().array() >= 0.0).all()) {
        throw std::invalid_argument("noise variances must be non-negative");
    }
    if (!x0.allFinite()) throw std::invalid_argument("x0 must be finite");
}

Eigen::Vector3d lorenz_rhs(const Lorenz63Params& p, const Eigen::Vector3d& s) {
    return {p.sigma * (s[1] - s[0]), s[0] * (p.rho - s[2]) - s[1], s[0] * s[1] - p.beta_l * s[2]};
}

Eigen::Vector3d rk4_step(const Lorenz63Params& p, const Eigen::Vector3d& s, double dt) {
    if (dt < 0.0) throw std::invalid_argument("rk4_step: dt must be >= 0");
    if (dt == 0.0) return s;
    const Eigen::Vector3d k1 = lorenz_rhs(p, s);
    const Eigen::Vector3d k2 = lorenz_rhs(p, s + 0.5 * dt * k1);
    const Eigen::Vector3d k3 = lorenz_rhs(p, s + 0.5 * dt * k2);
    const Eigen::Vector3d k4 = lorenz_rhs(p, s + dt * k3);
    Eigen::Vector3d next = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) throw DivergenceError("RK4 step produced a non-finite state", 0, 0.0);
    return next;
}

TruthAndObservations generate_truth_and_observations(const Lorenz63Params& p, SeededRng& rng) {
    p.validate();
    const int steps = p.steps_per_cycle();
    TruthAndObservations out;
    out.truth.resize(static_cast<Eigen::Index>(p.n_cycles) * steps + 1, 3);
    out.observations.resize(p.n_cycles, 3);
    Eigen::Vector3d state = p.x0;
    out.truth.row(0) = state.transpose();
    const Eigen::Vector3d sd = p.obs_noise_var.cwiseSqrt();
    for (int j = 0; j < p.n_cycles; ++j) {
        for (int s = 0; s < steps; ++s) {
            state = rk4_step(p, state, p.dt_inner);
            out.truth.row(static_cast<Eigen::Index>(j) * steps + s + 1) = state.transpose();
        }
        for (int a = 0; a < 3; ++a) out.observations(j, a) = state[a] + sd[a] * rng.normal();
    }
    return out;
}

Ensemble forecast_ensemble(const Lorenz63Params& p, const Ensemble& e, SeededRng& rng, unsigned threads,
                           double divergence_threshold) {
    if (e.dim() != 3) throw std::invalid_argument("forecast_ensemble: ensemble must have 3 columns");
    p.validate();
    const int steps = p.steps_per_cycle();
    const Eigen::Vector3d sd = p.forecast_variance().cwiseSqrt();
    const bool noisy = (sd.array() > 0.0).any();
    // One key per call keeps member streams independent of the thread count.
    const auto key = static_cast<std::uint64_t>(rng.uniform() * 9007199254740992.0);

    Ensemble out{Eigen::MatrixXd(e.size(), 3), e.time + p.dt_obs};
    parallel_for(static_cast<std::size_t>(e.size()), threads, [&](std::size_t i) {
        SeededRng member(mix_seed(key, i));
        Eigen::Vector3d x = e.positions.row(static_cast<Eigen::Index>(i)).transpose();
        for (int s = 0; s < steps; ++s) {
            x = rk4_step(p, x, p.dt_inner);
            if (noisy) {
                for (int a = 0; a < 3; ++a) x[a] += sd[a] * member.normal();
            }
            if (!x.allFinite() || x.norm() > divergence_threshold) {
                throw DivergenceError("forecast member " + std::to_string(i) + " left the ball of radius " +
                                          std::to_string(divergence_threshold),
                                      s, 0.0);
            }
        }
        out.positions.row(static_cast<Eigen::Index>(i)) = x.transpose();
    });
    return out;
}

std::string_view method_name(AssimilationMethod m) {
    switch (m) {
        case AssimilationMethod::EnKF: return "enkf";
        case AssimilationMethod::KME: return "kme";
        case AssimilationMethod::KMEKalman: return "kme-kalman";
        case AssimilationMethod::ForecastOnly: return "forecast-only";
    }
    return "unknown";
}

std::optional<AssimilationMethod> parse_method(std::string_view name) {
    for (auto m : {AssimilationMethod::EnKF, AssimilationMethod::KME, AssimilationMethod::KMEKalman,
                   AssimilationMethod::ForecastOnly}) {
        if (name == method_name(m)) return m;
    }
    return std::nullopt;
}

void AssimilationScenario::validate() const {
    params.validate();
    flow.validate();
    if (ensemble_size < 2) throw std::invalid_argument("ensemble_size must be >= 2");
    if (n_replicates < 1) throw std::invalid_argument("n_replicates must be >= 1");
    if (max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
    if (!(inference_obs_var > 0.0)) throw std::invalid_argument("inference observation variance must be positive");
    if (!(prior_var.array() >= 0.0).all()) throw std::invalid_argument("prior variances must be non-negative");
    if (!(divergence_threshold > 0.0)) throw std::invalid_argument("divergence threshold must be positive");
}

double AssimilationResult::mean_rmse() const {
    if (replicates.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : replicates) total += r.rmse;
    return total / static_cast<double>(replicates.size());
}

int AssimilationResult::total_retries() const {
    int total = 0;
    for (const auto& r : replicates) total += r.retries;
    return total;
}

namespace {

constexpr std::uint64_t kObservationStream = 1;
constexpr std::uint64_t kEnsembleStream = 2;

void check_bounded(const Ensemble& e, double threshold, int cycle) {
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        const double r = e.positions.row(i).norm();
        if (!std::isfinite(r) || r > threshold) {
            throw DivergenceError("analysis member " + std::to_string(i) + " diverged in cycle " +
                                      std::to_string(cycle),
                                  cycle, 0.0);
        }
    }
}

Eigen::MatrixXd assimilate(const AssimilationScenario& sc, const Eigen::MatrixXd& observations, SeededRng& rng,
                           unsigned threads) {
    const auto& p = sc.params;
    const Eigen::Index n = sc.ensemble_size;
    const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();
    const GaussianObservationModel base(eye, sc.inference_obs_var * eye, Eigen::Vector3d::Zero());

    Ensemble e{normal_draws(rng, n, 3) * sc.prior_var.cwiseSqrt().asDiagonal(), 0.0};
    e.positions.rowwise() += p.x0.transpose();

    FlowConfig cfg = sc.flow;
    cfg.preconditioner = EnsembleCovariancePreconditioner{};
    cfg.threads = threads;

    Eigen::MatrixXd means(p.n_cycles, 3);
    for (int j = 0; j < p.n_cycles; ++j) {
        e = forecast_ensemble(p, e, rng, threads, sc.divergence_threshold);
        const Eigen::VectorXd beta = observations.row(j).transpose();
        const GaussianObservationModel model = base.with_observation(beta);
        NegLogLikelihood h;
        if (sc.likelihood_override) {
            h = [&override = *sc.likelihood_override, beta](const Eigen::VectorXd& x) { return override(x, beta); };
        } else {
            h = [&model](const Eigen::VectorXd& x) { return nll(model, x); };
        }
        switch (sc.method) {
            case AssimilationMethod::EnKF:
                e.positions = enkf_analysis(e, model, rng).positions;
                break;
            case AssimilationMethod::KME:
                cfg.baseline = NoBaseline{};
                e.positions = run_flow(e.positions, sc.kernel, cfg, h).positions;
                break;
            case AssimilationMethod::KMEKalman:
                cfg.baseline = KalmanBucyBaseline{model};
                e.positions = run_flow(e.positions, sc.kernel, cfg, h).positions;
                break;
            case AssimilationMethod::ForecastOnly:
                break;
        }
        check_bounded(e, sc.divergence_threshold, j);
        means.row(j) = ensemble_mean(e.positions).transpose();
    }
    return means;
}

ReplicateResult run_replicate_with(const AssimilationScenario& sc, int replicate, unsigned threads) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t rep_seed = mix_seed(sc.seed, static_cast<std::uint64_t>(replicate));
    SeededRng obs_rng(rep_seed, kObservationStream);
    const TruthAndObservations data = generate_truth_and_observations(sc.params, obs_rng);

    ReplicateResult result;
    result.replicate = replicate;
    result.observations = data.observations;
    for (int attempt = 0;; ++attempt) {
        SeededRng rng(mix_seed(rep_seed, static_cast<std::uint64_t>(attempt)), kEnsembleStream);
        try {
            result.means = assimilate(sc, data.observations, rng, threads);
            result.retries = attempt;
            break;
        } catch (const DivergenceError& err) {
            if (attempt >= sc.max_retries) {
                throw DivergenceError("replicate " + std::to_string(replicate) + " of " +
                                          std::string(method_name(sc.method)) + " (N=" +
                                          std::to_string(sc.ensemble_size) + ") failed after " +
                                          std::to_string(attempt) + " retries: " + err.what(),
                                      err.step(), err.max_alpha());
            }
            spdlog::warn("replicate {} attempt {} discarded: {}", replicate, attempt, err.what());
        } catch (const NumericalError& err) {
            if (attempt >= sc.max_retries) {
                throw DivergenceError("replicate " + std::to_string(replicate) + " failed after " +
                                          std::to_string(attempt) + " retries: " + err.what(),
                                      0, 0.0);
            }
            spdlog::warn("replicate {} attempt {} discarded: {}", replicate, attempt, err.what());
        }
    }
    result.rmse = rmse_spacetime(result.means, result.observations);
    result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace

ReplicateResult run_replicate(const AssimilationScenario& sc, int replicate) {
    sc.validate();
    return run_replicate_with(sc, replicate, sc.threads);
}

AssimilationResult run_assimilation(const AssimilationScenario& sc) {
    sc.validate();
    AssimilationResult out;
    out.replicates.resize(static_cast<std::size_t>(sc.n_replicates));
    if (sc.threads > 1 && sc.n_replicates > 1) {
        parallel_for(out.replicates.size(), sc.threads, [&](std::size_t r) {
            out.replicates[r] = run_replicate_with(sc, static_cast<int>(r), 1);
        });
    } else {
        for (int r = 0; r < sc.n_replicates; ++r) out.replicates[r] = run_replicate_with(sc, r, sc.threads);
    }
    return out;
}

}  // namespace kmeflow
