#include "kmeflow/sampling.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

using namespace kmeflow;

// Reference points below come from scipy.stats.qmc.Sobol(scramble=False),
// which uses the same direction numbers; its first point is the origin.

TEST(Sobol, FirstPointsInThreeDimensions) {
    SobolSampler s(3);
    const std::array<std::array<double, 3>, 7> expected{{{0.5, 0.5, 0.5},
                                                          {0.75, 0.25, 0.25},
                                                          {0.25, 0.75, 0.75},
                                                          {0.375, 0.375, 0.625},
                                                          {0.875, 0.875, 0.125},
                                                          {0.625, 0.125, 0.875},
                                                          {0.125, 0.625, 0.375}}};
    for (const auto& row : expected) {
        const Eigen::VectorXd p = s.next();
        for (int a = 0; a < 3; ++a) EXPECT_EQ(p[a], row[a]);
    }
}

TEST(Sobol, WithoutSkipStartsAtOrigin) {
    SobolSampler s(2, false);
    EXPECT_EQ(s.next(), Eigen::Vector2d::Zero());
    EXPECT_EQ(s.next(), Eigen::Vector2d::Constant(0.5));
}

TEST(Sobol, HighDimensionColumns) {
    SobolSampler s(64);
    const std::array<double, 12> col9{0.5, 0.75, 0.25, 0.625, 0.125, 0.375, 0.875, 0.3125, 0.8125, 0.5625, 0.0625, 0.9375};
    const std::array<double, 12> col30{0.5, 0.25, 0.75, 0.375, 0.875, 0.125, 0.625, 0.4375, 0.9375, 0.1875, 0.6875, 0.0625};
    const std::array<double, 12> col63{0.5, 0.75, 0.25, 0.125, 0.625, 0.875, 0.375, 0.6875, 0.1875, 0.4375, 0.9375, 0.5625};
    Eigen::Vector4d sums = Eigen::Vector4d::Zero();
    for (int i = 1; i <= 1000; ++i) {
        const Eigen::VectorXd p = s.next();
        if (i <= 12) {
            EXPECT_EQ(p[9], col9[i - 1]) << "point " << i;
            EXPECT_EQ(p[30], col30[i - 1]) << "point " << i;
            EXPECT_EQ(p[63], col63[i - 1]) << "point " << i;
        }
        if (i == 1000) {
            EXPECT_EQ(p[50], 0.3525390625);
            EXPECT_EQ(p[51], 0.5166015625);
            EXPECT_EQ(p[52], 0.7529296875);
            EXPECT_EQ(p[53], 0.4384765625);
        }
    }
}

TEST(Sobol, PointsStrictlyInsideUnitCube) {
    SobolSampler s(17);
    for (int i = 0; i < 4096; ++i) {
        const Eigen::VectorXd p = s.next();
        EXPECT_GT(p.minCoeff(), 0.0);
        EXPECT_LT(p.maxCoeff(), 1.0);
    }
}

TEST(Sobol, RejectsBadDimension) {
    EXPECT_THROW(SobolSampler(0), std::invalid_argument);
    EXPECT_THROW(SobolSampler(65), std::invalid_argument);
}

TEST(Sampling, NormalQuantileMatchesScipy) {
    const std::array<std::pair<double, double>, 7> cases{{{1e-12, -7.034483825301131},
                                                           {0.001, -3.090232306167813},
                                                           {0.025, -1.9599639845400545},
                                                           {0.3, -0.5244005127080409},
                                                           {0.5, 0.0},
                                                           {0.9, 1.2815515655446004},
                                                           {0.999999, 4.753424308817087}}};
    for (const auto& [p, q] : cases) EXPECT_NEAR(normal_inverse_cdf(p), q, 1e-13 * (1.0 + std::abs(q))) << p;
    EXPECT_THROW((void)normal_inverse_cdf(0.0), std::invalid_argument);
    EXPECT_THROW((void)normal_inverse_cdf(1.0), std::invalid_argument);
}

TEST(Sampling, QuantileInvertsCdf) {
    for (double x = -8.0; x <= 5.0; x += 0.37) EXPECT_NEAR(normal_inverse_cdf(normal_cdf(x)), x, 1e-9);
}

TEST(Sampling, LogNormalCdfMatchesExtendedPrecision) {
    // mpmath, 40 digits
    const std::array<std::pair<double, double>, 9> cases{{{-40.0, -804.60844201375378817},
                                                           {-31.0, -484.85396362717928858},
                                                           {-29.5, -439.42947460915022775},
                                                           {-10.0, -53.231285150512470578},
                                                           {-1.0, -1.8410216450092635058},
                                                           {0.0, -0.69314718055994530942},
                                                           {3.0, -0.0013508099647481937988},
                                                           {6.0, -9.8658764552437573169e-10},
                                                           {9.0, -1.1285884059538406478e-19}}};
    for (const auto& [x, v] : cases) EXPECT_NEAR(log_normal_cdf(x), v, 1e-13 * std::abs(v)) << x;
}

TEST(Sampling, MixSeedMatchesSplitmix) {
    EXPECT_EQ(mix_seed(0, 0), 16294208416658607535ULL);
    EXPECT_EQ(mix_seed(42, 7), 14769051326987775908ULL);
    EXPECT_EQ(mix_seed(1ULL << 63, 123456789), 12456000018813736375ULL);
}

TEST(SeededRng, SameSeedSameStream) {
    SeededRng a(123, 4);
    SeededRng b(123, 4);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.normal(), b.normal());
}

TEST(SeededRng, StreamsDiffer) {
    SeededRng a(123, 4);
    SeededRng b(123, 5);
    SeededRng c = a.substream(0);
    std::set<double> first{a.uniform(), b.uniform(), c.uniform()};
    EXPECT_EQ(first.size(), 3u);
}

TEST(SeededRng, UniformOpenInterval) {
    SeededRng r(9);
    double mean = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
        mean += u;
    }
    EXPECT_NEAR(mean / 100000, 0.5, 0.005);
}

TEST(SeededRng, NormalDrawMoments) {
    SeededRng r(10);
    const Eigen::MatrixXd z = normal_draws(r, 200000, 2);
    EXPECT_NEAR(z.col(0).mean(), 0.0, 0.01);
    EXPECT_NEAR(z.col(1).squaredNorm() / z.rows(), 1.0, 0.01);
}

TEST(SobolGaussian, MomentsAndShape) {
    const Eigen::Vector2d mean(4.0, -1.0);
    Eigen::Matrix2d l;
    l << 1.0, 0.0, 0.5, 2.0;
    const Eigen::MatrixXd x = sobol_gaussian(4096, mean, l);
    ASSERT_EQ(x.rows(), 4096);
    ASSERT_EQ(x.cols(), 2);
    const Eigen::Vector2d m = x.colwise().mean();
    EXPECT_NEAR(m[0], 4.0, 1e-3);
    EXPECT_NEAR(m[1], -1.0, 1e-3);
    const Eigen::MatrixXd c = (x.rowwise() - m.transpose()).transpose() * (x.rowwise() - m.transpose()) / 4095.0;
    const Eigen::Matrix2d expected = l * l.transpose();
    EXPECT_LT((c - expected).cwiseAbs().maxCoeff(), 0.02);
}

TEST(SobolGaussian, ShiftKeepsPointsFinite) {
    SeededRng r(3);
    for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd shift = random_shift(r, 5);
        EXPECT_TRUE((shift.array() >= 0.0).all() && (shift.array() < 1.0).all());
        const Eigen::MatrixXd x = sobol_gaussian(512, Eigen::VectorXd::Zero(5), Eigen::MatrixXd::Identity(5, 5), shift);
        EXPECT_TRUE(x.allFinite());
    }
}

TEST(SobolGaussian, RejectsBadInput) {
    EXPECT_THROW((void)sobol_gaussian(10, Eigen::VectorXd::Zero(65), Eigen::MatrixXd::Identity(65, 65)),
                 std::invalid_argument);
    EXPECT_THROW((void)sobol_gaussian(10, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(3, 3)),
                 std::invalid_argument);
    EXPECT_THROW((void)sobol_gaussian(10, Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2),
                                      Eigen::VectorXd::Zero(3)),
                 std::invalid_argument);
}
