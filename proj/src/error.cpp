#include "kmeflow/error.hpp"

namespace kmeflow {

LikelihoodError::LikelihoodError(std::size_t particle, double value)
    : Error("negative log-likelihood is not finite at particle " + std::to_string(particle) + " (value " +
            std::to_string(value) + ")"),
      particle_(particle) {}

DivergenceError::DivergenceError(const std::string& what, int step, double max_alpha)
    : Error(what), step_(step), max_alpha_(max_alpha) {}

}  // namespace kmeflow
