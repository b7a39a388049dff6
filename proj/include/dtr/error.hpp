#pragma once

#include <stdexcept>
#include <string>

namespace dtr {

// Base of everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid numeric argument or parameter set (non-positive rating, bad exponent, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input data failed validation: schema, ordering, sign, range.
class DataValidationError : public Error {
 public:
  using Error::Error;
};

// Missing half-hourly samples inside a window that must be complete.
class GapError : public DataValidationError {
 public:
  using DataValidationError::DataValidationError;
};

// Not enough history (lags, days) to perform the request.
class InsufficientDataError : public DataValidationError {
 public:
  using DataValidationError::DataValidationError;
};

// The relay pre-load alone already exceeds the thermal boundary at the requested time.
class AlreadyTrippingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// A property that the mathematics guarantees did not hold.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace dtr
