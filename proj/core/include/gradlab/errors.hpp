#pragma once

#include <stdexcept>
#include <string>

namespace gradlab {

/// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes (names both shapes in the message).
struct DimensionError : Error {
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

/// A computation description references a name that was never bound.
struct CompositionError : Error {
  using Error::Error;
};

/// An operation's structural contract was violated (e.g. non-scalar loss).
struct ContractError : Error {
  using Error::Error;
};

/// Malformed experiment configuration; carries the offending field path.
struct ConfigError : Error {
  std::string field_path;
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), field_path(std::move(path)) {}
};

/// A Neumann iterate left the representable range.
struct DivergenceError : Error {
  using Error::Error;
};

/// A stored trace failed checksum verification during replay.
struct CorruptionError : Error {
  using Error::Error;
};

/// The (damped) curvature operator is not positive definite.
struct NotPositiveDefiniteError : Error {
  using Error::Error;
};

}  // namespace gradlab
