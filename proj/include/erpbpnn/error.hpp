#pragma once

#include <stdexcept>
#include <string>

namespace erpbpnn {

/// Shape or configuration mismatch. Always a programming or config error.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an optimization step produces non-finite values.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace erpbpnn
