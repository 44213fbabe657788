#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gghm {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters, specs or flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Label or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Not enough videos or frames to draw the requested sample.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by an op, or a graph whose normalisers vanish.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace gghm
