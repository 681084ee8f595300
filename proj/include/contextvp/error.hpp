#pragma once

#include <stdexcept>
#include <string>

namespace cvp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration or spec that fails validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (open, write, rename).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary files. `kind()` tells the failure modes apart.
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, DimOverflow, NameCollision, Mismatch };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace cvp
