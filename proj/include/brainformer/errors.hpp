#pragma once

#include <stdexcept>
#include <string>

namespace brainformer {

/// Shape or extent disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: backward on a non-scalar, reuse of a consumed tape, ...
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf appeared in an operation result or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model/training configuration (divisibility, ranges, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Illegal values in input data, e.g. label values outside {0,1,2,3}.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;
inline constexpr int kExitIo = 3;

}  // namespace brainformer
