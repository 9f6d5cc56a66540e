#pragma once

#include <stdexcept>
#include <string>

namespace mb {

// Exit-code contract: 1 usage, 2 data, 3 numerical.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointFormatError : DataError {
  using DataError::DataError;
};

struct CheckpointVersionError : DataError {
  using DataError::DataError;
};

struct CheckpointShapeError : DataError {
  using DataError::DataError;
};

}  // namespace mb
