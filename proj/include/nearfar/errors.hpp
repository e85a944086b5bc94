#pragma once

#include <stdexcept>
#include <string>

namespace nearfar {

// Shape mismatch between operands (rows/cols disagree).
class DimensionError : public std::invalid_argument {
  public:
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid configuration or usage: bad bandwidth, malformed config file,
// out-of-range flag values. CLI maps these to exit code 2.
class ConfigError : public std::invalid_argument {
  public:
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numeric failure at runtime: non-convergence, NaN input, divergence,
// singular geometry.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace nearfar
