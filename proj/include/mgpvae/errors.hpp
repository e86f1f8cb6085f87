#pragma once

#include <stdexcept>
#include <string>

namespace mgpvae {

// Exception families map one-to-one onto the CLI exit codes.

/// Bad input: malformed config, inconsistent shapes, impossible requests. Exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor shape contract violated.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite values, failed factorizations, divergence. Exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system and format failures. Exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mgpvae
