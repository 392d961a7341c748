#pragma once

#include <stdexcept>
#include <string>

namespace smoe {

// Shape or dimension mismatch between tensors.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration value.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf where a finite value is required, or a degenerate distribution.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data: ids out of range, length mismatch, empty trace.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File IO or format failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace smoe
