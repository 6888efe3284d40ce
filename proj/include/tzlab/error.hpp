#pragma once

#include <stdexcept>
#include <string>

namespace tzlab {

/// Error categories. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  Config = 2,
  Numeric = 3,
  Io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Shape and argument contract violations. Reported as config errors at the CLI.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error(ErrorKind::Config, message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error(ErrorKind::Numeric, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorKind::Config, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::Io, message) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace tzlab
