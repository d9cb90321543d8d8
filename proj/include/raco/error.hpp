#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace raco {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or invalid call arguments.
struct ConfigError : Error {
  using Error::Error;
};

/// Problems with input data: unreadable files, schema mismatches,
/// unparseable cells, degenerate tables.
struct DataError : Error {
  using Error::Error;
};

/// A prediction rate was requested over an empty record set. Carries the
/// constraint index and the offending subset of partition cells so callers
/// can report which local dataset was empty.
struct EmptyRateError : Error {
  int constraint_index;
  std::vector<int> subset;

  EmptyRateError(const std::string& what, int constraint, std::vector<int> cells)
      : Error(what), constraint_index(constraint), subset(std::move(cells)) {}
};

/// Non-finite values encountered mid-computation (diverged training etc.).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace raco
