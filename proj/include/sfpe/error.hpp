#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sfpe {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  enum class Kind { syntax, unknown_identifier, illegal_variable, arity };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), kind_(kind), offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

// Raised when an expression is evaluated outside its domain (log of a
// non-positive number, 0/0, overflow, ...).
class EvalError : public Error {
 public:
  EvalError(const std::string& what, std::string subexpression)
      : Error(what + " in '" + subexpression + "'"), subexpression_(std::move(subexpression)) {}

  const std::string& subexpression() const noexcept { return subexpression_; }

 private:
  std::string subexpression_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LyapunovError : public Error {
 public:
  using Error::Error;
};

// Numerically exploding or otherwise unusable Monte-Carlo run.
class SimulationError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

// Requested work exceeds the configured cap.
class ResourceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sfpe
