#pragma once

#include <stdexcept>
#include <string>

namespace sekd {

/// Base of all library errors. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration, unknown keys, invalid ranges.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or unsuitable input data (images, checkpoints, datasets).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, singular transforms, failed estimation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace sekd
