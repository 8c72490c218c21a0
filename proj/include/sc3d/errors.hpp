#pragma once

#include <stdexcept>
#include <string>

namespace sc3d {

// Error hierarchy. The CLI maps each family to its own exit code.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// Caller violated an operation's documented precondition.
struct PreconditionError : Error {
  using Error::Error;
};

// Non-finite values, lost positive-definiteness, degenerate statistics.
struct NumericalError : Error {
  using Error::Error;
};

// Malformed files and unreadable paths.
struct DataError : Error {
  using Error::Error;
};

// Missing or invalid configuration keys.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace sc3d
