#include "kmeflow/error.hpp"
#include "kmeflow/metrics.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

using namespace kmeflow;
using kmeflow::testing::Rand;

namespace {

// Quadratic kernel (x.y + 1)^2 has features (x x^T, sqrt(2) x, 1), so with
// biased moments MMD^2 = |E xx^T - E yy^T|_F^2 + 2 |E x - E y|^2.
double quadratic_mmd_closed_form(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys) {
    const Eigen::VectorXd mx = xs.colwise().mean();
    const Eigen::VectorXd my = ys.colwise().mean();
    const Eigen::MatrixXd sx = xs.transpose() * xs / static_cast<double>(xs.rows());
    const Eigen::MatrixXd sy = ys.transpose() * ys / static_cast<double>(ys.rows());
    return (sx - sy).squaredNorm() + 2.0 * (mx - my).squaredNorm();
}

double brute_force_w2(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys) {
    std::vector<int> perm(static_cast<std::size_t>(xs.size()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) cost += std::pow(xs[static_cast<Eigen::Index>(i)] - ys[perm[i]], 2);
        best = std::min(best, cost);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(xs.size()));
}

}  // namespace

TEST(Metrics, MomentsBiasedUnbiasedRelation) {
    Rand r(31);
    for (int t = 0; t < 20; ++t) {
        const int n = r.integer(2, 50);
        const Eigen::MatrixXd x = r.normal_matrix(n, 3, 4.0);
        const MomentSummary m = moments(x);
        const Eigen::MatrixXd scaled = m.cov_unbiased * (n - 1.0) / static_cast<double>(n);
        EXPECT_LT((m.cov_biased - scaled).cwiseAbs().maxCoeff(), 1e-15 * (1.0 + m.cov_biased.cwiseAbs().maxCoeff()));
        EXPECT_EQ(m.cov_unbiased, m.cov_unbiased.transpose());
        EXPECT_LT((m.mean - x.colwise().mean().transpose()).norm(), 1e-12);
    }
    EXPECT_THROW((void)moments(Eigen::MatrixXd::Zero(1, 2)), DegenerateEnsembleError);
}

TEST(Metrics, MomentsOfLargeOffsetAreAccurate) {
    Eigen::MatrixXd x(4, 1);
    x << 1e9 + 1, 1e9 + 2, 1e9 + 3, 1e9 + 4;
    const MomentSummary m = moments(x);
    EXPECT_DOUBLE_EQ(m.cov_unbiased(0, 0), 5.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.cov_biased(0, 0), 1.25);
}

TEST(Metrics, QuadraticMmdMatchesClosedForm) {
    Rand r(32);
    for (int t = 0; t < 100; ++t) {
        const int d = r.integer(1, 5);
        const Eigen::MatrixXd xs = r.normal_matrix(r.integer(1, 50), d, r.uniform(0.1, 3.0));
        const Eigen::MatrixXd ys = r.normal_matrix(r.integer(1, 50), d, r.uniform(0.1, 3.0)).array() + r.uniform(-1, 1);
        const double expected = quadratic_mmd_closed_form(xs, ys);
        EXPECT_NEAR(mmd2(KernelSpec::quadratic(), xs, ys), expected, 1e-10 * std::max(expected, 1e-3));
    }
}

TEST(Metrics, MmdSymmetricAndNonNegative) {
    Rand r(33);
    for (int t = 0; t < 50; ++t) {
        const Eigen::MatrixXd xs = r.normal_matrix(r.integer(1, 30), 2);
        const Eigen::MatrixXd ys = r.normal_matrix(r.integer(1, 30), 2);
        for (const KernelSpec& k : {KernelSpec::rbf(r.uniform(0.3, 3.0)), KernelSpec::quadratic()}) {
            EXPECT_EQ(mmd2(k, xs, ys), mmd2(k, ys, xs));
            EXPECT_GE(mmd2(k, xs, ys), 0.0);
        }
    }
    const Eigen::MatrixXd xs = r.normal_matrix(10, 2);
    EXPECT_LT(mmd2(KernelSpec::rbf(1.0), xs, xs), 1e-15);
    EXPECT_THROW((void)mmd2(KernelSpec::rbf(1.0), xs, Eigen::MatrixXd::Zero(3, 3)), std::invalid_argument);
}

TEST(Metrics, W2MatchesPermutationBruteForce) {
    Rand r(34);
    for (int t = 0; t < 50; ++t) {
        const int n = r.integer(1, 6);
        const Eigen::VectorXd xs = r.normal_vector(n, 2.0);
        const Eigen::VectorXd ys = r.normal_vector(n, 2.0).array() + 1.0;
        EXPECT_NEAR(w2_1d(xs, ys), brute_force_w2(xs, ys), 1e-12);
    }
}

TEST(Metrics, W2TriangleInequality) {
    Rand r(35);
    for (int t = 0; t < 100; ++t) {
        const int n = r.integer(1, 40);
        const Eigen::VectorXd a = r.normal_vector(n);
        const Eigen::VectorXd b = r.normal_vector(n, 2.0);
        const Eigen::VectorXd c = r.normal_vector(n, 0.5).array() + 3.0;
        EXPECT_LE(w2_1d(a, c), w2_1d(a, b) + w2_1d(b, c) + 1e-12);
    }
}

TEST(Metrics, W2Basics) {
    EXPECT_EQ(w2_1d(Eigen::Vector3d(3, 1, 2), Eigen::Vector3d(2, 3, 1)), 0.0);
    EXPECT_DOUBLE_EQ(w2_1d(Eigen::Vector2d(0, 1), Eigen::Vector2d(2, 3)), 2.0);
    EXPECT_THROW((void)w2_1d(Eigen::Vector2d(0, 1), Eigen::Vector3d(0, 1, 2)), std::invalid_argument);
}

TEST(Metrics, RmseSpacetime) {
    Eigen::MatrixXd est(2, 3);
    Eigen::MatrixXd obs(2, 3);
    est << 0, 0, 0, 0, 0, 0;
    obs << 3, 1, 0, 4, 1, 2;
    // per coordinate: sqrt(12.5), 1, sqrt(2)
    EXPECT_NEAR(rmse_spacetime(est, obs), (std::sqrt(12.5) + 1.0 + std::sqrt(2.0)) / 3.0, 1e-15);
    EXPECT_THROW((void)rmse_spacetime(est, obs.topRows(1)), std::invalid_argument);
}

TEST(Metrics, Skewness) {
    EXPECT_NEAR(skewness(Eigen::Vector3d(-1, 0, 1)), 0.0, 1e-15);
    // scipy.stats.skew([0, 0, 0, 1])
    Eigen::Vector4d x(0, 0, 0, 1);
    EXPECT_NEAR(skewness(x), 1.1547005383792515, 1e-14);
}
