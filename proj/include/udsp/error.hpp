#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace udsp {

// Base class for every structured error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent graph input (dangling links, cycles, conflicts).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Input file that cannot be parsed or fails schema validation. `line` is
// 1-based; 0 means the error is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Mode/supervision mismatch or invalid hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace udsp
