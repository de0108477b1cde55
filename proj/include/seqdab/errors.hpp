#pragma once

#include <stdexcept>
#include <string>

namespace seqdab {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched extents, invalid axes, out-of-range indices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem and format failures (CLI exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void check_io(bool cond, const std::string& msg) {
  if (!cond) throw IoError(msg);
}

}  // namespace seqdab
