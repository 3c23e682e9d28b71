#pragma once

#include <stdexcept>
#include <string>

namespace fedprotip {

// Error taxonomy shared across the library. Every throwing contract uses one
// of these so callers can distinguish misuse from numerical trouble.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands (rows/cols, rank budgets, batch sizes).
struct DimensionError : Error {
  using Error::Error;
};

// A documented precondition was violated (non-orthonormal basis, bad weights).
struct ContractError : Error {
  using Error::Error;
};

// Floating-point failure: non-finite values, no convergence.
struct NumericalError : Error {
  using Error::Error;
};

// Bad caller-supplied values (labels out of range, epsilon outside (0,1]).
struct InputError : Error {
  using Error::Error;
};

// Object queried in a state that cannot answer (incomplete accuracy matrix,
// uncaptured forward trace).
struct StateError : Error {
  using Error::Error;
};

// A data partition cannot satisfy its guarantees.
struct PartitionError : Error {
  using Error::Error;
};

// Configuration file problems; carries line/field diagnostics in the message.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem failures, with the offending path in the message.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fedprotip
