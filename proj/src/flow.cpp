#include "kmeflow/flow.hpp"

#include "kmeflow/error.hpp"
#include "kmeflow/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace kmeflow {

void FlowConfig::validate() const {
    if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be positive");
    if (!(max_speed > 0.0)) throw std::invalid_argument("max_speed must be positive");
    if (const auto* fixed = std::get_if<FixedPreconditioner>(&preconditioner)) {
        const Eigen::MatrixXd& c = fixed->matrix;
        if (c.rows() != c.cols() || c.rows() == 0) throw std::invalid_argument("fixed preconditioner must be square");
        if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
            throw std::invalid_argument("fixed preconditioner must be symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c, Eigen::EigenvaluesOnly);
        if (!(eig.eigenvalues().minCoeff() > 0.0)) {
            throw std::invalid_argument("fixed preconditioner must be positive definite");
        }
    }
}

void write_flow_step_header(std::ostream& os) { os << "step,residual,drift_norm,baseline_norm,max_alpha\n"; }

void write_flow_step_row(std::ostream& os, const FlowStep& s) {
    const auto old = os.precision(std::numeric_limits<double>::max_digits10);
    os << s.step << ',' << s.residual << ',' << s.drift_norm << ',' << s.baseline_norm << ',' << s.max_alpha << '\n';
    os.precision(old);
}

GradientTable::GradientTable(const Eigen::MatrixXd& positions, const KernelSpec& k, unsigned threads)
    : n_(positions.rows()), d_(positions.cols()), threads_(threads), kernel_(n_, n_) {
    const auto d = static_cast<std::size_t>(d_);
    if (const auto* rbf = std::get_if<RbfKernel>(&k.variant())) {
        inv_s2_ = 1.0 / (rbf->bandwidth * rbf->bandwidth);
        // Only differences enter, so shift by the first particle to keep them exact.
        points_ = (positions.rowwise() - positions.row(0)).transpose();
        parallel_for(static_cast<std::size_t>(n_), threads, [&](std::size_t col) {
            const auto i = static_cast<Eigen::Index>(col);
            const double* xi = points_.col(i).data();
            for (Eigen::Index l = 0; l < n_; ++l) {
                const double* xl = points_.col(l).data();
                double sq = 0.0;
                for (Eigen::Index a = 0; a < d_; ++a) sq += (xl[a] - xi[a]) * (xl[a] - xi[a]);
                kernel_(l, i) = -0.5 * sq * inv_s2_;
            }
        });
        kernel_ = kernel_.array().exp().matrix();
        kernel_.triangularView<Eigen::StrictlyUpper>() = kernel_.transpose();
        return;
    }
    points_ = positions.transpose();
    table_.resize(n_ * d_, n_);
    parallel_for(static_cast<std::size_t>(n_), threads, [&](std::size_t col) {
        const auto i = static_cast<Eigen::Index>(col);
        const std::span<const double> xi{points_.col(i).data(), d};
        double* out = table_.col(i).data();
        for (Eigen::Index l = 0; l < n_; ++l) {
            kernel_(l, i) = k.eval_grad_x(std::span<const double>(points_.col(l).data(), d), xi,
                                          std::span<double>(out + l * d_, d));
        }
    });
}

Eigen::VectorXd GradientTable::gradient(Eigen::Index l, Eigen::Index i) const {
    if (l < 0 || l >= n_ || i < 0 || i >= n_) throw std::out_of_range("GradientTable::gradient index");
    if (table_.size() != 0) return table_.block(l * d_, i, d_, 1);
    return (-kernel_(l, i) * inv_s2_) * (points_.col(l) - points_.col(i));
}

Eigen::MatrixXd GradientTable::gram(const Eigen::MatrixXd& C) const {
    if (C.rows() != d_ || C.cols() != d_) throw std::invalid_argument("preconditioner has the wrong dimension");
    // G = (1/N) sum_l T_l^T C T_l = (1/N) B^T B with B = (I (x) S) T and S the symmetric square root of C.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd sqrt_c = eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();

    Eigen::MatrixXd scaled(n_ * d_, n_);
    if (table_.size() == 0) {
        // RBF: S grad(l, i) = -k(X^l, X^i) / sigma^2 (S X^l - S X^i).
        const Eigen::MatrixXd y = sqrt_c * points_;
        parallel_for(static_cast<std::size_t>(n_), threads_, [&](std::size_t col) {
            const auto i = static_cast<Eigen::Index>(col);
            const double* yi = y.col(i).data();
            double* out = scaled.col(i).data();
            for (Eigen::Index l = 0; l < n_; ++l) {
                const double s = -kernel_(l, i) * inv_s2_;
                const double* yl = y.col(l).data();
                for (Eigen::Index a = 0; a < d_; ++a) out[l * d_ + a] = s * (yl[a] - yi[a]);
            }
        });
    } else {
        // Every d consecutive table entries hold one gradient.
        Eigen::Map<Eigen::MatrixXd>(scaled.data(), d_, n_ * n_).noalias() =
            sqrt_c * Eigen::Map<const Eigen::MatrixXd>(table_.data(), d_, n_ * n_);
    }

    // Lower triangle by column panels; plain products run faster than a rank update here.
    constexpr Eigen::Index kPanel = 128;
    const double inv_n = 1.0 / static_cast<double>(n_);
    Eigen::MatrixXd g(n_, n_);
    for (Eigen::Index j0 = 0; j0 < n_; j0 += kPanel) {
        const Eigen::Index width = std::min(kPanel, n_ - j0);
        g.block(j0, j0, n_ - j0, width).noalias() =
            inv_n * (scaled.middleCols(j0, n_ - j0).transpose() * scaled.middleCols(j0, width));
    }
    g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
    if (!g.allFinite()) throw NumericalError("Gram matrix has non-finite entries");
    return g;
}

Eigen::VectorXd GradientTable::h_vector(const Eigen::VectorXd& h_values) const {
    if (h_values.size() != n_) throw std::invalid_argument("h_values must have one entry per particle");
    for (Eigen::Index j = 0; j < n_; ++j) {
        if (!std::isfinite(h_values[j])) throw LikelihoodError(static_cast<std::size_t>(j), h_values[j]);
    }
    // Shift by h(X^0) first: exact, and a constant h then gives exactly zero.
    Eigen::VectorXd centred = h_values.array() - h_values[0];
    centred.array() -= centred.mean();
    return kernel_ * centred / static_cast<double>(n_);
}

Eigen::VectorXd GradientTable::correction(const Eigen::MatrixXd& v0_values) const {
    if (v0_values.rows() != n_ || v0_values.cols() != d_) {
        throw std::invalid_argument("baseline velocities must be N x d");
    }
    const Eigen::MatrixXd v0 = v0_values.transpose();  // column j = v0(X^j)
    if (table_.size() != 0) {
        const Eigen::Map<const Eigen::VectorXd> flat(v0.data(), n_ * d_);
        return table_.transpose() * flat / static_cast<double>(n_);
    }
    // sum_j k_ji (X^j - X^i) . v_j = (K p)_i - X^i . (V K)_i with p_j = X^j . v_j.
    const Eigen::VectorXd p = (points_.array() * v0.array()).colwise().sum().transpose();
    const Eigen::MatrixXd vk = v0 * kernel_;
    const Eigen::VectorXd xv = (points_.array() * vk.array()).colwise().sum().transpose();
    return (-inv_s2_ / static_cast<double>(n_)) * (kernel_ * p - xv);
}

Eigen::MatrixXd GradientTable::drift(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& C) const {
    if (alpha.size() != n_) throw std::invalid_argument("alpha must have one entry per particle");
    Eigen::MatrixXd weighted(d_, n_);  // column i = sum_j alpha_j grad(i, j)
    if (table_.size() != 0) {
        const Eigen::VectorXd flat = table_ * alpha;
        weighted = Eigen::Map<const Eigen::MatrixXd>(flat.data(), d_, n_);
    } else {
        // sum_j alpha_j k_ij (X^i - X^j) = X^i (K alpha)_i - (X diag(alpha) K)_i
        const Eigen::RowVectorXd ka = (kernel_ * alpha).transpose();
        weighted = -inv_s2_ * (points_.array().rowwise() * ka.array()).matrix();
        weighted.noalias() += inv_s2_ * (points_ * alpha.asDiagonal() * kernel_);
    }
    return -(C * weighted).transpose() / static_cast<double>(n_);
}

Eigen::MatrixXd assemble_gram(const Ensemble& e, const KernelSpec& k, const Eigen::MatrixXd& C) {
    return GradientTable(e.positions, k).gram(C);
}

Eigen::VectorXd assemble_h_vector(const Ensemble& e, const KernelSpec& k, const Eigen::VectorXd& h_values) {
    return GradientTable(e.positions, k).h_vector(h_values);
}

Eigen::VectorXd assemble_correction_vector(const Ensemble& e, const KernelSpec& k, const Eigen::MatrixXd& v0_values) {
    return GradientTable(e.positions, k).correction(v0_values);
}

namespace {

// One step of iterative refinement; kept only if it lowers the residual.
template <class Factorization>
void refine(const Factorization& fac, const Eigen::MatrixXd& a, const Eigen::VectorXd& f, double scale,
            Eigen::VectorXd& alpha) {
    const Eigen::VectorXd r = f - a * alpha / scale;
    const Eigen::VectorXd candidate = alpha + scale * fac.solve(r);
    if (candidate.allFinite() && (f - a * candidate / scale).norm() < r.norm()) alpha = candidate;
}

}  // namespace

Eigen::VectorXd solve_weights(const Eigen::MatrixXd& G, const Eigen::VectorXd& f, double epsilon) {
    const Eigen::Index n = G.rows();
    if (G.cols() != n || f.size() != n) throw std::invalid_argument("solve_weights: shape mismatch");
    if (!(epsilon > 0.0)) throw std::invalid_argument("solve_weights: epsilon must be positive");
    Eigen::MatrixXd a = G;
    a.diagonal().array() += epsilon;
    const double scale = static_cast<double>(n);

    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
        Eigen::VectorXd alpha = scale * llt.solve(f);
        if (alpha.allFinite()) {
            refine(llt, a, f, scale, alpha);
            return alpha;
        }
    }
    // Rounding can leave G + eps I slightly indefinite when eps is far below |G| (low-rank G).
    // Eigen then flags tiny pivots, but the pivoted LDL^T solution is still usable.
    static std::atomic<bool> warned{false};
    const auto level = warned.exchange(true) ? spdlog::level::debug : spdlog::level::warn;
    spdlog::log(level, "Cholesky factorization of G + eps I failed (N = {}, eps = {:g}); using LDL^T", n, epsilon);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Eigen::VectorXd alpha = scale * ldlt.solve(f);
    if (!alpha.allFinite()) {
        throw NumericalError("could not solve for the flow weights (N = " + std::to_string(n) +
                             ", max |G| = " + std::to_string(G.cwiseAbs().maxCoeff()) + ")");
    }
    refine(ldlt, a, f, scale, alpha);
    return alpha;
}

double weight_residual(const Eigen::MatrixXd& G, const Eigen::VectorXd& f, double epsilon,
                       const Eigen::VectorXd& alpha) {
    const double n = static_cast<double>(G.rows());
    return ((G * alpha + epsilon * alpha) / n - f).norm();
}

Eigen::MatrixXd preconditioner_matrix(const Preconditioner& p, const Eigen::MatrixXd& positions) {
    const Eigen::Index d = positions.cols();
    if (std::holds_alternative<EnsembleCovariancePreconditioner>(p)) return ensemble_covariance(positions);
    if (std::holds_alternative<IdentityPreconditioner>(p)) return Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd& fixed = std::get<FixedPreconditioner>(p).matrix;
    if (fixed.rows() != d) throw std::invalid_argument("fixed preconditioner has the wrong dimension");
    return fixed;
}

namespace {

double max_row_norm(const Eigen::MatrixXd& m) {
    return m.rows() == 0 ? 0.0 : m.rowwise().norm().maxCoeff();
}

}  // namespace

StepResult flow_step(const Ensemble& e, const KernelSpec& k, const FlowConfig& cfg, const NegLogLikelihood& h,
                     double dt, int step_index) {
    if (!(dt > 0.0)) throw std::invalid_argument("flow_step: dt must be positive");
    const Eigen::Index n = e.size();
    if (n < 1) throw DegenerateEnsembleError("flow_step on an empty ensemble");

    const Eigen::MatrixXd c = preconditioner_matrix(cfg.preconditioner, e.positions);

    Eigen::VectorXd h_values(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        h_values[j] = h(e.positions.row(j).transpose());
        if (!std::isfinite(h_values[j])) throw LikelihoodError(static_cast<std::size_t>(j), h_values[j]);
    }

    const GradientTable table(e.positions, k, cfg.threads);
    Eigen::VectorXd f = table.h_vector(h_values);

    std::optional<Eigen::MatrixXd> v0;
    if (const auto* kb = std::get_if<KalmanBucyBaseline>(&cfg.baseline)) {
        const Eigen::VectorXd mean = ensemble_mean(e.positions);
        const Eigen::MatrixXd cov = ensemble_covariance(e.positions);
        v0 = kalman_bucy_velocities(kb->model, e.positions, mean, cov);
        f += table.correction(*v0);
    }

    const Eigen::MatrixXd g = table.gram(c);
    FlowStep diag;
    diag.step = step_index;
    diag.alpha = solve_weights(g, f, cfg.epsilon);
    diag.residual = weight_residual(g, f, cfg.epsilon, diag.alpha);
    diag.max_alpha = diag.alpha.size() ? diag.alpha.cwiseAbs().maxCoeff() : 0.0;

    Eigen::MatrixXd velocity = table.drift(diag.alpha, c);
    diag.drift_norm = max_row_norm(velocity);
    diag.drift_l2 = std::sqrt(velocity.squaredNorm() / static_cast<double>(n));
    if (v0) {
        diag.baseline_norm = max_row_norm(*v0);
        velocity += *v0;
    }

    const double speed = max_row_norm(velocity);
    if (!velocity.allFinite() || speed > cfg.max_speed) {
        throw DivergenceError("flow diverged at step " + std::to_string(step_index) +
                                  " (max speed " + std::to_string(speed) + ", max |alpha| " +
                                  std::to_string(diag.max_alpha) + ")",
                              step_index, diag.max_alpha);
    }

    StepResult result{e, std::move(diag)};
    result.ensemble.positions += dt * velocity;
    result.ensemble.time = e.time + dt;
    if (!result.ensemble.all_finite()) {
        throw DivergenceError("non-finite particle positions after step " + std::to_string(step_index), step_index,
                              result.diagnostics.max_alpha);
    }
    return result;
}

Ensemble run_flow(const Eigen::MatrixXd& prior_samples, const KernelSpec& k, const FlowConfig& cfg,
                  const NegLogLikelihood& h, const FlowObserver& observer) {
    cfg.validate();
    if (prior_samples.rows() < 2) {
        throw DegenerateEnsembleError("run_flow needs at least 2 particles, got " +
                                      std::to_string(prior_samples.rows()));
    }
    Ensemble e{prior_samples, 0.0};
    const double dt = 1.0 / cfg.n_steps;
    bool warned = false;
    for (int step = 0; step < cfg.n_steps; ++step) {
        if (!warned && (e.positions.rowwise() - e.positions.row(0)).cwiseAbs().maxCoeff() == 0.0) {
            spdlog::warn("all particles coincide at step {}; the flow cannot move them", step);
            warned = true;
        }
        StepResult r = flow_step(e, k, cfg, h, dt, step);
        e = std::move(r.ensemble);
        e.time = (step + 1) * dt;
        if (observer) observer(r.diagnostics);
    }
    return e;
}

}  // namespace kmeflow
