#pragma once

#include <stdexcept>
#include <string>

namespace selcon {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes: NumericError -> 3, everything else -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// A prototype or anchor could not be normalized (pooled vector ~ 0).
class DegeneratePrototype : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace selcon
