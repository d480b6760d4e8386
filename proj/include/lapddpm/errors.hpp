#pragma once

#include <stdexcept>
#include <string>

namespace lapddpm {

// Numerical failures (non-finite losses or sampler states). The CLI maps
// these to exit code 3, validation errors (std::invalid_argument) to 2, and
// everything else (I/O, parsing) to 1.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lapddpm
