#include "kmeflow/baselines.hpp"
#include "kmeflow/error.hpp"
#include "kmeflow/flow.hpp"
#include "kmeflow/sampling.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

using namespace kmeflow;
using kmeflow::testing::min_eigenvalue;
using kmeflow::testing::Rand;

namespace {

// Direct double sums over KernelSpec::grad_x, written independently of GradientTable.
struct BruteForce {
    Eigen::MatrixXd x;
    KernelSpec k;

    [[nodiscard]] Eigen::Index n() const { return x.rows(); }
    [[nodiscard]] Eigen::VectorXd row(Eigen::Index i) const { return x.row(i).transpose(); }
    [[nodiscard]] Eigen::VectorXd grad(Eigen::Index l, Eigen::Index i) const { return k.grad_x(row(l), row(i)); }

    [[nodiscard]] Eigen::MatrixXd gram(const Eigen::MatrixXd& c) const {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n(), n());
        for (Eigen::Index i = 0; i < n(); ++i)
            for (Eigen::Index j = 0; j < n(); ++j)
                for (Eigen::Index l = 0; l < n(); ++l) g(i, j) += grad(l, i).dot(c * grad(l, j));
        return g / static_cast<double>(n());
    }

    [[nodiscard]] Eigen::VectorXd h_vector(const Eigen::VectorXd& h) const {
        const double mean = h.mean();
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n());
        for (Eigen::Index i = 0; i < n(); ++i)
            for (Eigen::Index j = 0; j < n(); ++j) out[i] += k.eval(row(i), row(j)) * (h[j] - mean);
        return out / static_cast<double>(n());
    }

    [[nodiscard]] Eigen::VectorXd correction(const Eigen::MatrixXd& v0) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(n());
        for (Eigen::Index i = 0; i < n(); ++i)
            for (Eigen::Index j = 0; j < n(); ++j) out[i] += grad(j, i).dot(v0.row(j).transpose());
        return out / static_cast<double>(n());
    }

    [[nodiscard]] Eigen::MatrixXd drift(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& c) const {
        Eigen::MatrixXd out(n(), x.cols());
        for (Eigen::Index i = 0; i < n(); ++i) {
            Eigen::VectorXd s = Eigen::VectorXd::Zero(x.cols());
            for (Eigen::Index j = 0; j < n(); ++j) s += alpha[j] * grad(i, j);
            out.row(i) = -(c * s).transpose() / static_cast<double>(n());
        }
        return out;
    }
};

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / (1.0 + b.norm()); }

NegLogLikelihood quadratic_h() {
    return [](const Eigen::VectorXd& x) { return 0.5 * x.squaredNorm(); };
}

}  // namespace

TEST(GradientTable, MatchesBruteForce) {
    Rand r(11);
    for (int t = 0; t < 12; ++t) {
        const int n = r.integer(2, 12);
        const int d = r.integer(1, 4);
        const Eigen::MatrixXd x = r.normal_matrix(n, d, 1.5);
        const Eigen::MatrixXd c = r.spd(d);
        const Eigen::VectorXd h = r.normal_vector(n);
        const Eigen::MatrixXd v0 = r.normal_matrix(n, d);
        const Eigen::VectorXd alpha = r.normal_vector(n);
        for (const KernelSpec& k : {KernelSpec::rbf(r.uniform(0.3, 3.0)), KernelSpec::quadratic()}) {
            const BruteForce bf{x, k};
            const GradientTable table(x, k);
            EXPECT_LT(rel_err(table.gram(c), bf.gram(c)), 1e-12) << k.name();
            EXPECT_LT(rel_err(table.h_vector(h), bf.h_vector(h)), 1e-12) << k.name();
            EXPECT_LT(rel_err(table.correction(v0), bf.correction(v0)), 1e-12) << k.name();
            EXPECT_LT(rel_err(table.drift(alpha, c), bf.drift(alpha, c)), 1e-12) << k.name();
            EXPECT_LT(rel_err(table.gradient(1, 0), bf.grad(1, 0)), 1e-13) << k.name();
            EXPECT_LT(rel_err(table.kernel_matrix(), gram_matrix(k, x)), 1e-14) << k.name();
        }
    }
}

TEST(GradientTable, ThreadCountDoesNotChangeResults) {
    Rand r(12);
    const Eigen::MatrixXd x = r.normal_matrix(150, 3);
    const Eigen::MatrixXd c = r.spd(3);
    for (const KernelSpec& k : {KernelSpec::rbf(1.0), KernelSpec::quadratic()}) {
        const GradientTable one(x, k, 1);
        const GradientTable three(x, k, 3);
        EXPECT_EQ(one.gram(c), three.gram(c));
        EXPECT_EQ(one.kernel_matrix(), three.kernel_matrix());
    }
}

TEST(GradientTable, RejectsBadShapes) {
    const GradientTable table(Eigen::MatrixXd::Random(5, 2), KernelSpec::rbf(1.0));
    EXPECT_THROW((void)table.gram(Eigen::MatrixXd::Identity(3, 3)), std::invalid_argument);
    EXPECT_THROW((void)table.h_vector(Eigen::VectorXd::Zero(4)), std::invalid_argument);
    EXPECT_THROW((void)table.correction(Eigen::MatrixXd::Zero(5, 3)), std::invalid_argument);
    EXPECT_THROW((void)table.drift(Eigen::VectorXd::Zero(6), Eigen::MatrixXd::Identity(2, 2)), std::invalid_argument);
    EXPECT_THROW((void)table.gradient(5, 0), std::out_of_range);
}

TEST(GradientTable, NonFiniteLikelihoodIsReported) {
    const GradientTable table(Eigen::MatrixXd::Random(4, 2), KernelSpec::rbf(1.0));
    Eigen::VectorXd h = Eigen::VectorXd::Ones(4);
    h[2] = std::nan("");
    try {
        (void)table.h_vector(h);
        FAIL() << "expected LikelihoodError";
    } catch (const LikelihoodError& e) {
        EXPECT_EQ(e.particle(), 2u);
    }
}

TEST(Flow, GramOperatorIsSymmetricPsd) {
    Rand r(13);
    for (int t = 0; t < 50; ++t) {
        const int n = r.integer(2, 60);
        const int d = r.integer(1, 5);
        const Eigen::MatrixXd x = r.normal_matrix(n, d, r.uniform(0.2, 5.0));
        const KernelSpec k = t % 2 ? KernelSpec::quadratic() : KernelSpec::rbf(r.uniform(0.2, 5.0));
        const Eigen::MatrixXd c = t % 3 == 0 ? ensemble_covariance(x) : r.spd(d, 0.01, 10.0);
        const Eigen::MatrixXd g = assemble_gram(Ensemble{x}, k, c);
        EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_GE(min_eigenvalue(g), -1e-8 * n * std::max(1.0, g.cwiseAbs().maxCoeff()));
    }
}

TEST(Flow, SolveResidualWithinBound) {
    Rand r(14);
    for (int t = 0; t < 30; ++t) {
        const int n = r.integer(2, 80);
        const int d = r.integer(1, 4);
        const Eigen::MatrixXd x = r.normal_matrix(n, d);
        const KernelSpec k = t % 2 ? KernelSpec::quadratic() : KernelSpec::rbf(r.uniform(0.5, 3.0));
        const Eigen::MatrixXd g = assemble_gram(Ensemble{x}, k, ensemble_covariance(x));
        // f as assembled from a Gaussian log-likelihood with a random centre and scale
        const Eigen::VectorXd m = r.normal_vector(d, 2.0);
        const double s = r.uniform(0.2, 2.0);
        Eigen::VectorXd h(n);
        for (int i = 0; i < n; ++i) h[i] = 0.5 * (x.row(i).transpose() - m).squaredNorm() / s;
        const Eigen::VectorXd f = assemble_h_vector(Ensemble{x}, k, h);
        const double eps = std::pow(10.0, r.uniform(-9.0, -2.0));
        const Eigen::VectorXd alpha = solve_weights(g, f, eps);
        EXPECT_LE(weight_residual(g, f, eps, alpha), 1e-8 * (1.0 + f.norm()));
    }
}

TEST(Flow, StepResidualDiagnosticWithinBound) {
    const Eigen::MatrixXd x = sobol_gaussian(200, Eigen::VectorXd::Constant(2, 1.0), Eigen::MatrixXd::Identity(2, 2));
    FlowConfig cfg;
    cfg.n_steps = 10;
    cfg.epsilon = 1e-6;
    int steps = 0;
    (void)run_flow(x, KernelSpec::rbf(2.0), cfg, quadratic_h(), [&](const FlowStep& s) {
        EXPECT_LE(s.residual, 1e-8);
        EXPECT_EQ(s.step, steps++);
        EXPECT_EQ(s.alpha.size(), 200);
    });
    EXPECT_EQ(steps, 10);
}

TEST(Flow, SolveRejectsBadInput) {
    EXPECT_THROW((void)solve_weights(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(2), 1e-3),
                 std::invalid_argument);
    EXPECT_THROW((void)solve_weights(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3), 0.0),
                 std::invalid_argument);
}

TEST(Flow, StepMatchesBruteForceEuler) {
    Rand r(15);
    const Eigen::MatrixXd x = r.normal_matrix(9, 2);
    const KernelSpec k = KernelSpec::rbf(1.7);
    const NegLogLikelihood h = [](const Eigen::VectorXd& v) { return std::pow(v[0] - 0.3, 2) + std::sin(v[1]); };
    FlowConfig cfg;
    cfg.epsilon = 1e-4;
    const double dt = 0.1;
    const StepResult step = flow_step(Ensemble{x}, k, cfg, h, dt);

    const BruteForce bf{x, k};
    Eigen::VectorXd hv(9);
    for (int j = 0; j < 9; ++j) hv[j] = h(x.row(j).transpose());
    const Eigen::MatrixXd c = ensemble_covariance(x);
    const Eigen::MatrixXd g = bf.gram(c);
    Eigen::MatrixXd a = g;
    a.diagonal().array() += cfg.epsilon;
    const Eigen::VectorXd alpha = 9.0 * a.ldlt().solve(bf.h_vector(hv));
    const Eigen::MatrixXd expected = x + dt * bf.drift(alpha, c);
    EXPECT_LT(rel_err(step.ensemble.positions, expected), 1e-10);
    EXPECT_LT(rel_err(step.diagnostics.alpha, alpha), 1e-9);
    EXPECT_DOUBLE_EQ(step.ensemble.time, 0.1);
}

TEST(Flow, KalmanBaselineAddsCorrection) {
    Rand r(16);
    const Eigen::MatrixXd x = r.normal_matrix(8, 2);
    const KernelSpec k = KernelSpec::rbf(1.2);
    const GaussianObservationModel model(Eigen::MatrixXd::Identity(2, 2), 0.5 * Eigen::MatrixXd::Identity(2, 2),
                                         Eigen::Vector2d(0.2, -0.1));
    const NegLogLikelihood h = [&](const Eigen::VectorXd& v) { return nll(model, v) + 0.1 * std::pow(v[0], 4); };
    FlowConfig cfg;
    cfg.epsilon = 1e-5;
    cfg.baseline = KalmanBucyBaseline{model};
    const StepResult step = flow_step(Ensemble{x}, k, cfg, h, 1.0);

    const BruteForce bf{x, k};
    Eigen::VectorXd hv(8);
    for (int j = 0; j < 8; ++j) hv[j] = h(x.row(j).transpose());
    const Eigen::MatrixXd c = ensemble_covariance(x);
    const Eigen::MatrixXd v0 = kalman_bucy_velocities(model, x, ensemble_mean(x), c);
    Eigen::MatrixXd a = bf.gram(c);
    a.diagonal().array() += cfg.epsilon;
    const Eigen::VectorXd alpha = 8.0 * a.ldlt().solve(bf.h_vector(hv) + bf.correction(v0));
    const Eigen::MatrixXd expected = x + bf.drift(alpha, c) + v0;
    EXPECT_LT(rel_err(step.ensemble.positions, expected), 1e-9);
    EXPECT_GT(step.diagnostics.baseline_norm, 0.0);
}

TEST(Flow, ConstantLikelihoodIsExactNoOp) {
    Rand r(17);
    for (int t = 0; t < 20; ++t) {
        const int n = r.integer(2, 40);
        const int d = r.integer(1, 4);
        const Eigen::MatrixXd x = r.normal_matrix(n, d, 2.0);
        const double value = r.uniform(-5.0, 5.0);
        FlowConfig cfg;
        cfg.n_steps = r.integer(1, 5);
        cfg.epsilon = std::pow(10.0, r.uniform(-10.0, -3.0));
        if (t % 3 == 1) cfg.preconditioner = IdentityPreconditioner{};
        if (t % 3 == 2) cfg.preconditioner = FixedPreconditioner{r.spd(d)};
        const KernelSpec k = t % 2 ? KernelSpec::quadratic() : KernelSpec::rbf(r.uniform(0.3, 3.0));
        const Ensemble out = run_flow(x, k, cfg, [value](const Eigen::VectorXd&) { return value; });
        EXPECT_EQ(out.positions, x);
        EXPECT_DOUBLE_EQ(out.time, 1.0);
    }
}

TEST(Flow, PermutationEquivariance) {
    Rand r(18);
    const Eigen::MatrixXd x = sobol_gaussian(64, Eigen::Vector2d(1.0, -1.0), Eigen::MatrixXd::Identity(2, 2));
    std::vector<int> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), r.engine());
    Eigen::MatrixXd px(64, 2);
    for (int i = 0; i < 64; ++i) px.row(i) = x.row(perm[i]);

    FlowConfig cfg;
    cfg.n_steps = 20;
    cfg.epsilon = 1e-6;
    for (const KernelSpec& k : {KernelSpec::rbf(2.0), KernelSpec::quadratic()}) {
        const Ensemble a = run_flow(x, k, cfg, quadratic_h());
        const Ensemble b = run_flow(px, k, cfg, quadratic_h());
        for (int i = 0; i < 64; ++i) {
            EXPECT_LT((b.positions.row(i) - a.positions.row(perm[i])).norm(), 1e-8) << k.name() << " particle " << i;
        }
    }
}

TEST(Flow, DriftShrinksWithRegularisation) {
    // With C = I, |drift|^2 = N sum_k lambda_k / (lambda_k + eps)^2 (u_k . f)^2.
    const Eigen::MatrixXd x = sobol_gaussian(100, Eigen::VectorXd::Constant(2, 2.0), Eigen::MatrixXd::Identity(2, 2));
    const NegLogLikelihood h = [](const Eigen::VectorXd& v) { return 0.5 * v.squaredNorm() + 0.2 * std::pow(v[0], 3); };
    for (const KernelSpec& k : {KernelSpec::rbf(1.5), KernelSpec::quadratic()}) {
        double previous = std::numeric_limits<double>::infinity();
        for (int e = -10; e <= -2; ++e) {
            FlowConfig cfg;
            cfg.epsilon = std::pow(10.0, e);
            cfg.preconditioner = IdentityPreconditioner{};
            const double l2 = flow_step(Ensemble{x}, k, cfg, h, 0.01).diagnostics.drift_l2;
            EXPECT_LE(l2, previous * (1.0 + 1e-9)) << k.name() << " eps 1e" << e;
            previous = l2;
        }
    }
}

TEST(Flow, QuadraticKernelReproducesKalmanBucyDrift) {
    const int n = 2000;
    const Eigen::MatrixXd x = sobol_gaussian(n, Eigen::VectorXd::Constant(1, 4.0), Eigen::MatrixXd::Identity(1, 1));
    const GaussianObservationModel model(Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1),
                                         Eigen::VectorXd::Zero(1));
    FlowConfig cfg;
    cfg.epsilon = 1e-10;
    const StepResult step = flow_step(Ensemble{x}, KernelSpec::quadratic(), cfg, quadratic_h(), 1.0);
    const Eigen::MatrixXd kme = step.ensemble.positions - x;
    const Eigen::MatrixXd kb = kalman_bucy_velocities(model, x, ensemble_mean(x), ensemble_covariance(x));
    EXPECT_LE((kme - kb).norm() / kb.norm(), 0.05);
}

TEST(Flow, ThreadsGiveIdenticalTrajectories) {
    const Eigen::MatrixXd x = sobol_gaussian(120, Eigen::VectorXd::Constant(3, 1.0), Eigen::MatrixXd::Identity(3, 3));
    FlowConfig cfg;
    cfg.n_steps = 5;
    const Ensemble a = run_flow(x, KernelSpec::rbf(2.0), cfg, quadratic_h());
    cfg.threads = 4;
    const Ensemble b = run_flow(x, KernelSpec::rbf(2.0), cfg, quadratic_h());
    EXPECT_EQ(a.positions, b.positions);
}

TEST(Flow, ExcessiveSpeedRaisesDivergence) {
    const Eigen::MatrixXd x = sobol_gaussian(20, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
    FlowConfig cfg;
    cfg.max_speed = 1e-6;
    const NegLogLikelihood h = [](const Eigen::VectorXd& v) { return 50.0 * v[0]; };
    try {
        (void)run_flow(x, KernelSpec::rbf(1.0), cfg, h);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.step(), 0);
        EXPECT_GT(e.max_alpha(), 0.0);
    }
}

TEST(Flow, NonFiniteLikelihoodRaises) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 1);
    const NegLogLikelihood h = [](const Eigen::VectorXd& v) { return v[0] > 0.0 ? std::log(-1.0) : 0.0; };
    EXPECT_THROW((void)run_flow(x, KernelSpec::rbf(1.0), FlowConfig{}, h), LikelihoodError);
}

TEST(FlowConfig, Validation) {
    FlowConfig ok;
    EXPECT_NO_THROW(ok.validate());
    FlowConfig c = ok;
    c.n_steps = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = ok;
    c.epsilon = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = ok;
    Eigen::Matrix2d asym;
    asym << 1.0, 0.1, 0.0, 1.0;
    c.preconditioner = FixedPreconditioner{asym};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.preconditioner = FixedPreconditioner{Eigen::Vector2d(1.0, -1.0).asDiagonal()};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.preconditioner = FixedPreconditioner{Eigen::Vector2d(1.0, 2.0).asDiagonal()};
    EXPECT_NO_THROW(c.validate());
}

TEST(Flow, RejectsSingleParticle) {
    EXPECT_THROW((void)run_flow(Eigen::MatrixXd::Zero(1, 2), KernelSpec::rbf(1.0), FlowConfig{}, quadratic_h()),
                 DegenerateEnsembleError);
}

TEST(Flow, StepRowsAreCsv) {
    std::ostringstream os;
    write_flow_step_header(os);
    FlowStep s;
    s.step = 3;
    s.alpha = Eigen::VectorXd::Ones(2);
    write_flow_step_row(os, s);
    const std::string text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    const auto header_end = text.find('\n');
    const auto commas = [](std::string_view v) { return std::count(v.begin(), v.end(), ','); };
    EXPECT_EQ(commas(text.substr(0, header_end)), commas(text.substr(header_end + 1)));
}
