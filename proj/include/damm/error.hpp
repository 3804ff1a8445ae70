#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace damm {

// Bad arguments, malformed input, violated preconditions. CLI exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public UsageError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : UsageError(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Input for which the requested quantity is not uniquely defined
// (e.g. the log map between antipodal points).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Numerical failure: non-finite values, singular factorizations. CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace damm
