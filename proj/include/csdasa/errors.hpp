#pragma once

#include <stdexcept>
#include <string>

namespace csdasa {

// Error taxonomy used across the library. All inherit from std::runtime_error
// so callers can catch broadly or by category.

// Tensor shapes do not chain (conv/matmul/elementwise operands).
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bandwidth <= 0, band beyond Nyquist, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data (container files, labels, degenerate inputs).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (backward on a non-scalar, item() on a non-scalar, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged or could not proceed.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace csdasa
