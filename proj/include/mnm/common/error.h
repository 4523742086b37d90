#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mnm {

// Base class for every error raised by the library. `kind()` is a stable
// short tag ("shape", "config", "io", "format", ...) used by the CLI to map
// failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

// Training hit too many consecutive non-finite steps.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

// A checkpoint does not fit the model configuration it is loaded into.
class MismatchError : public Error {
 public:
  explicit MismatchError(const std::string& message) : Error("mismatch", message) {}
};

std::string ShapeToString(const std::vector<std::size_t>& shape);

}  // namespace mnm
