#pragma once

#include <stdexcept>
#include <string>

namespace muvie {

// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user configuration: unknown keys, out-of-range values, bad flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file or directory that could not be read or parsed.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Non-finite values surfaced during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace muvie
