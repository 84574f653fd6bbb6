#pragma once

#include <stdexcept>
#include <string>

namespace caprnn {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shapes do not line up (always names both shapes in the message).
class DimensionError : public Error {
  using Error::Error;
};

/// An index (token id, row, feature index) is out of range.
class IndexError : public Error {
  using Error::Error;
};

/// Non-finite values or invalid numeric input (zero-norm normalization,
/// NaN gradients, ...).
class NumericError : public Error {
  using Error::Error;
};

/// An object was used out of protocol (e.g. backward twice without reset).
class StateError : public Error {
  using Error::Error;
};

/// A configuration struct fails validation.
class ConfigError : public Error {
  using Error::Error;
};

/// An operation was called with arguments that can never be valid.
class UsageError : public Error {
  using Error::Error;
};

/// Input data violates a documented expectation (empty caption, ...).
class DataError : public Error {
  using Error::Error;
};

/// A file could not be read or does not match its documented format.
class LoadError : public Error {
  using Error::Error;
};

}  // namespace caprnn
