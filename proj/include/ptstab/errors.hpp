#pragma once

#include <stdexcept>
#include <string>

namespace ptstab {

/// Bad arguments or mismatched shapes. CLI exit code 1.
struct validation_error : std::invalid_argument {
    explicit validation_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Numerical failure (singular system, NaN/Inf, stability violation). CLI exit code 2.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Iteration did not converge; carries the final residual.
struct convergence_error : numeric_error {
    double residual;
    int iterations;
    convergence_error(const std::string& msg, double res, int iters)
        : numeric_error(msg), residual(res), iterations(iters) {}
};

/// Filesystem / serialization failure. CLI exit code 3.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ptstab
