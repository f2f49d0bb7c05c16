#pragma once

#include <stdexcept>
#include <string>

namespace spregret {

// Base for every error the library raises. Each subclass maps to one CLI exit
// code (see tools/spregret_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: dimension mismatches, out-of-range parameters, bad files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Information-structure failure, e.g. an oracle pattern that is not
// quadratically invariant.
class StructureError : public Error {
 public:
  using Error::Error;
};

// The conic backend did not return an optimal status.
class SolverError : public Error {
 public:
  using Error::Error;
};

// A post-condition that must hold mathematically did not (solver output
// audit failed, regret negative with a QI oracle, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// A restriction was requested on a plant that does not support it.
class UnsupportedError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

}  // namespace detail

}  // namespace spregret
