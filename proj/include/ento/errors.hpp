#pragma once

#include <stdexcept>
#include <string>

namespace ento {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid numeric argument (non-positive length, zero magnification, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

// Malformed input file; the message names the offending line where known.
class ParseError : public Error {
public:
  using Error::Error;
};

// Tensor / image / mask dimension mismatch.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Mask contains no component that survives the dust filter.
class NoInsectError : public Error {
public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
public:
  using Error::Error;
};

// Bad run configuration: missing paths, invalid option combinations.
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace ento
