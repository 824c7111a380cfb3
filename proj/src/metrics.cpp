#include "kmeflow/metrics.hpp"

#include "kmeflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmeflow {

MomentSummary moments(const Eigen::MatrixXd& xs) {
    const Eigen::Index n = xs.rows();
    if (n < 2) throw DegenerateEnsembleError("moments need at least 2 samples, got " + std::to_string(n));
    MomentSummary m;
    const Eigen::RowVectorXd origin = xs.row(0);
    Eigen::MatrixXd centred = xs.rowwise() - origin;
    const Eigen::RowVectorXd shift = centred.colwise().mean();
    m.mean = (origin + shift).transpose();
    centred.rowwise() -= shift;
    Eigen::MatrixXd scatter = centred.transpose() * centred;
    scatter = 0.5 * (scatter + scatter.transpose()).eval();
    m.cov_unbiased = scatter / static_cast<double>(n - 1);
    m.cov_biased = scatter / static_cast<double>(n);
    return m;
}

namespace {

double mean_kernel(const KernelSpec& k, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::MatrixXd at = a.transpose();
    const Eigen::MatrixXd bt = b.transpose();
    const auto d = static_cast<std::size_t>(a.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < at.cols(); ++i) {
        double row = 0.0;
        const std::span<const double> x(at.col(i).data(), d);
        for (Eigen::Index j = 0; j < bt.cols(); ++j) row += k.eval(x, std::span<const double>(bt.col(j).data(), d));
        total += row;
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

// Total order on sample sets so that mmd2 evaluates identically for (x, y) and (y, x).
bool canonical_less(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

double mmd2(const KernelSpec& k, const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys) {
    if (xs.cols() != ys.cols()) throw std::invalid_argument("mmd2: sample sets have different dimensions");
    if (xs.rows() == 0 || ys.rows() == 0) throw std::invalid_argument("mmd2: empty sample set");
    const bool swap = canonical_less(ys, xs);
    const Eigen::MatrixXd& a = swap ? ys : xs;
    const Eigen::MatrixXd& b = swap ? xs : ys;
    const double value = (mean_kernel(k, a, a) + mean_kernel(k, b, b)) - 2.0 * mean_kernel(k, a, b);
    return std::max(value, 0.0);
}

double w2_1d(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys) {
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("w2_1d requires equal sample sizes (" + std::to_string(xs.size()) + " vs " +
                                    std::to_string(ys.size()) + ")");
    }
    if (xs.size() == 0) throw std::invalid_argument("w2_1d: empty samples");
    std::vector<double> a(xs.data(), xs.data() + xs.size());
    std::vector<double> b(ys.data(), ys.data() + ys.size());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

double rmse_spacetime(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& observations) {
    if (estimates.rows() != observations.rows() || estimates.cols() != observations.cols()) {
        throw std::invalid_argument("rmse_spacetime: estimates and observations have different shapes");
    }
    if (estimates.rows() < 1 || estimates.cols() < 1) throw std::invalid_argument("rmse_spacetime: empty input");
    const Eigen::MatrixXd err = estimates - observations;
    const double j = static_cast<double>(err.rows());
    double total = 0.0;
    for (Eigen::Index c = 0; c < err.cols(); ++c) total += std::sqrt(err.col(c).squaredNorm() / j);
    return total / static_cast<double>(err.cols());
}

double skewness(const Eigen::VectorXd& xs) {
    if (xs.size() < 2) throw DegenerateEnsembleError("skewness needs at least 2 samples");
    const Eigen::ArrayXd c = xs.array() - xs.mean();
    const double m2 = c.square().mean();
    const double m3 = c.cube().mean();
    return m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

}  // namespace kmeflow
