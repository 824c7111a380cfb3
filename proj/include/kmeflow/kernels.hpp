#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <variant>

namespace kmeflow {

/// Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)).
struct RbfKernel {
    double bandwidth = 1.0;
};

/// Quadratic kernel (x.y + 1)^2.
struct QuadraticKernel {};

/// Positive-definite kernel on R^d with pointwise evaluation and the gradient
/// in the first argument.
///
/// The flow only ever touches a kernel through `eval` and `grad_x`, so the
/// variant set can grow without changes elsewhere. All members are const and
/// safe to call concurrently.
class KernelSpec {
public:
    using Variant = std::variant<RbfKernel, QuadraticKernel>;

    /// Throws std::invalid_argument unless bandwidth > 0 and finite.
    static KernelSpec rbf(double bandwidth);
    static KernelSpec quadratic();

    [[nodiscard]] const Variant& variant() const noexcept { return kernel_; }
    [[nodiscard]] bool is_rbf() const noexcept { return std::holds_alternative<RbfKernel>(kernel_); }
    /// Bandwidth of an RBF kernel, 0 for the quadratic kernel.
    [[nodiscard]] double bandwidth() const noexcept;
    /// "rbf" or "quadratic"; the spelling used in config files.
    [[nodiscard]] std::string name() const;

    [[nodiscard]] double eval(std::span<const double> x, std::span<const double> y) const;
    void grad_x(std::span<const double> x, std::span<const double> y, std::span<double> out) const;

    /// Value and first-argument gradient in one pass; returns k(x,y).
    double eval_grad_x(std::span<const double> x, std::span<const double> y, std::span<double> out) const;

    [[nodiscard]] double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
    [[nodiscard]] Eigen::VectorXd grad_x(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;

private:
    explicit KernelSpec(Variant k) : kernel_(k) {}

    Variant kernel_;
};

/// Gram matrix [k(x_i, x_j)] for the rows of `points`.
[[nodiscard]] Eigen::MatrixXd gram_matrix(const KernelSpec& k, const Eigen::MatrixXd& points);

}  // namespace kmeflow
