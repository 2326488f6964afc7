#pragma once

#include <stdexcept>
#include <string>

namespace dmps {

/// Raised when tensor extents, site specs or operator shapes do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an iterative procedure hits its iteration cap. Carries the
/// best residual reached so the caller can decide whether it is acceptable.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double best_residual)
        : std::runtime_error(what), best_residual_(best_residual) {}

    double best_residual() const noexcept { return best_residual_; }

private:
    double best_residual_;
};

/// A measurement update annihilated the state (time step too large).
class DegenerateUpdateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace dmps
