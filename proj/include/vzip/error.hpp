#pragma once

#include <stdexcept>
#include <string>

namespace vzip {

// Base of every error raised by the library. The CLI maps BudgetError to
// exit code 4 and everything else derived from Error to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible or invalid tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf input, or attention rows that are not row-stochastic.
class NumericInputError : public Error {
 public:
  using Error::Error;
};

// Token counts that cannot be honoured (k = 0, k > n, M > remaining, ...).
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Reduction over an axis of extent 0.
class EmptyAxisError : public Error {
 public:
  using Error::Error;
};

// Index (token, layer, axis) outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration or manifest contents.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NPY-specific failures. Each malformed-file condition has its own type so
// callers (and tests) can tell them apart without parsing messages.
class NpyMagicError : public IoError {
 public:
  using IoError::IoError;
};
class NpyVersionError : public IoError {
 public:
  using IoError::IoError;
};
class NpyDtypeError : public IoError {
 public:
  using IoError::IoError;
};
class NpyOrderError : public IoError {
 public:
  using IoError::IoError;
};
class NpyHeaderError : public IoError {
 public:
  using IoError::IoError;
};
class NpyTruncatedError : public IoError {
 public:
  using IoError::IoError;
};
class NpyPayloadError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace vzip
