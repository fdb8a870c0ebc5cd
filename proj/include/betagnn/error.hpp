#pragma once

#include <stdexcept>
#include <string>

namespace betagnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or model dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an operation, or a diverged training run.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk input; the message carries file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace betagnn
