#include "kmeflow/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace kmeflow {

namespace {

void check_dims(std::size_t x, std::size_t y) {
    if (x != y) {
        throw std::invalid_argument("kernel arguments have different dimensions (" + std::to_string(x) +
                                    " vs " + std::to_string(y) + ")");
    }
}

double squared_distance(std::span<const double> x, std::span<const double> y) {
    // Direct subtraction: particles concentrate, the expanded form cancels badly.
    double acc = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) {
        const double diff = x[a] - y[a];
        acc += diff * diff;
    }
    return acc;
}

double dot(std::span<const double> x, std::span<const double> y) {
    double acc = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) acc += x[a] * y[a];
    return acc;
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

KernelSpec KernelSpec::rbf(double bandwidth) {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
        throw std::invalid_argument("RBF bandwidth must be positive and finite");
    }
    return KernelSpec(RbfKernel{bandwidth});
}

KernelSpec KernelSpec::quadratic() { return KernelSpec(QuadraticKernel{}); }

double KernelSpec::bandwidth() const noexcept {
    if (const auto* rbf = std::get_if<RbfKernel>(&kernel_)) return rbf->bandwidth;
    return 0.0;
}

std::string KernelSpec::name() const { return is_rbf() ? "rbf" : "quadratic"; }

double KernelSpec::eval(std::span<const double> x, std::span<const double> y) const {
    check_dims(x.size(), y.size());
    if (const auto* rbf = std::get_if<RbfKernel>(&kernel_)) {
        return std::exp(-squared_distance(x, y) / (2.0 * rbf->bandwidth * rbf->bandwidth));
    }
    const double s = dot(x, y) + 1.0;
    return s * s;
}

double KernelSpec::eval_grad_x(std::span<const double> x, std::span<const double> y, std::span<double> out) const {
    check_dims(x.size(), y.size());
    check_dims(x.size(), out.size());
    if (const auto* rbf = std::get_if<RbfKernel>(&kernel_)) {
        const double inv_s2 = 1.0 / (rbf->bandwidth * rbf->bandwidth);
        const double value = std::exp(-0.5 * squared_distance(x, y) * inv_s2);
        const double scale = -value * inv_s2;
        for (std::size_t a = 0; a < x.size(); ++a) out[a] = scale * (x[a] - y[a]);
        return value;
    }
    const double s = dot(x, y) + 1.0;
    for (std::size_t a = 0; a < x.size(); ++a) out[a] = 2.0 * s * y[a];
    return s * s;
}

void KernelSpec::grad_x(std::span<const double> x, std::span<const double> y, std::span<double> out) const {
    eval_grad_x(x, y, out);
}

double KernelSpec::eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return eval(as_span(x), as_span(y));
}

Eigen::VectorXd KernelSpec::grad_x(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    Eigen::VectorXd out(x.size());
    grad_x(as_span(x), as_span(y), {out.data(), static_cast<std::size_t>(out.size())});
    return out;
}

Eigen::MatrixXd gram_matrix(const KernelSpec& k, const Eigen::MatrixXd& points) {
    const Eigen::Index n = points.rows();
    const Eigen::MatrixXd rows = points.transpose();  // one particle per contiguous column
    const auto d = static_cast<std::size_t>(points.cols());
    Eigen::MatrixXd gram(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = j; i < n; ++i) {
            const double v = k.eval(std::span<const double>(rows.col(i).data(), d), std::span<const double>(rows.col(j).data(), d));
            gram(i, j) = v;
            gram(j, i) = v;
        }
    }
    return gram;
}

}  // namespace kmeflow
