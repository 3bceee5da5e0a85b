#pragma once

#include <stdexcept>
#include <string>

namespace melpatch {

// Error categories map one-to-one onto CLI exit codes.

/// Bad configuration or usage (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data: WAV files, codebooks, bitstreams (exit code 3).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or evaluation (exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace melpatch
