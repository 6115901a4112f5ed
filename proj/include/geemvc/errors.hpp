#pragma once

#include <stdexcept>
#include <string>

namespace geemvc {

// Invalid user input: unknown columns, malformed formulas, bad option combos.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: divergence, singular systems, irreparable covariances.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / parse failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace geemvc
