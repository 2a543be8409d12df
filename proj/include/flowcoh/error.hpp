#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowcoh {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter or configuration value violates an operation's precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed or inconsistent (bad records, mismatched lengths).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A flow record could not be parsed; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A numerical routine failed to produce a finite result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowcoh
