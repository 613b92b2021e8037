#pragma once

#include <stdexcept>
#include <string>

namespace shiftwatch {

// All library errors derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unknown feature names, dimension mismatches.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Not enough points / empty inputs.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, malformed rows, bad labels.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation not valid in the current object state (stale cache, unfitted detector).
class StateError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace shiftwatch
