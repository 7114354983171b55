#pragma once

#include <stdexcept>
#include <string>

namespace clutter4d {

// Error categories map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised for a file that exists but whose header or payload is malformed.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

void log_warning(const std::string& message);

}  // namespace clutter4d
