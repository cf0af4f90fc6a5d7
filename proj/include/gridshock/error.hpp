#pragma once

#include <stdexcept>
#include <string>

namespace gridshock {

// Error categories map onto CLI exit codes (see cli_exit_code in tools/).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input structure: missing columns, wrong header.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Too few qualifying observations for an estimate.
class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IncompatibleVersionError : public Error {
 public:
  using Error::Error;
};

// Non-finite likelihood, diverging simulation, NaN propagation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridshock
