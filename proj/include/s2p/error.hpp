#pragma once

#include <stdexcept>
#include <string>

namespace s2p {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or raster dimensions do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Preprocessing found no foreground pixels.
class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in the wrong object state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit FormatError(const std::string& what) : Error(what), offset_(0) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace s2p
