#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kmeflow {

/// Base class for every runtime failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ensemble too small (or otherwise degenerate) for the requested statistic.
class DegenerateEnsembleError : public Error {
public:
    using Error::Error;
};

/// A linear solve or quadrature did not reach the requested accuracy.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// The negative log-likelihood returned a non-finite value.
class LikelihoodError : public Error {
public:
    LikelihoodError(std::size_t particle, double value);

    [[nodiscard]] std::size_t particle() const noexcept { return particle_; }

private:
    std::size_t particle_;
};

/// Particle positions became non-finite or moved implausibly fast.
///
/// Carries the flow step at which it happened and the largest |alpha| of that
/// step so callers (e.g. the assimilation retry loop) can report it.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int step, double max_alpha);

    [[nodiscard]] int step() const noexcept { return step_; }
    [[nodiscard]] double max_alpha() const noexcept { return max_alpha_; }

private:
    int step_;
    double max_alpha_;
};

/// Invalid experiment configuration (maps to CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace kmeflow
