#pragma once

#include <stdexcept>
#include <string>

namespace maris {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (N > T, temperature <= 0, level mismatch...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Incompatible array shapes or spatial misalignment.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: annotation files, dangling references, geometry.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace maris
