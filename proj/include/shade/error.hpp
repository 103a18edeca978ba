#pragma once

#include <stdexcept>
#include <string>

namespace shade {

// Error taxonomy. The CLI maps these onto exit codes, so library code
// should throw the most specific category that applies.

// Tensor shape / dimension mismatch at an op boundary.
struct shape_error : std::invalid_argument {
  explicit shape_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse: a precondition that callers control was violated.
struct contract_error : std::logic_error {
  explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid configuration value (exit code 2).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data or file format (exit code 3).
struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (exit code 4).
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure (exit code 5).
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace shade
