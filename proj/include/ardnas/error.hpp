#ifndef ARDNAS_ERROR_HPP
#define ARDNAS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ardnas {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up (layer input, energy target, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Convolution / pooling geometry that yields no valid output position.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition (stale cache, bad argument).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (IDX, export JSON).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ardnas

#endif  // ARDNAS_ERROR_HPP
