#pragma once

#include <stdexcept>
#include <string>

namespace hpk {

// Base class for everything this library throws. Subclasses carry the
// failure category so callers (notably the CLI) can report without
// string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's contract (shape mismatch, bad labels, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// An argument value is outside its admissible range.
class ParamError : public Error {
 public:
  using Error::Error;
};

// Non-finite value fed into a numeric primitive.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Gradient requested without a recorded forward pass.
class TapeError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; line is 1-based where known, 0 otherwise.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line = 0)
      : Error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

// Checkpoint and run configuration disagree (class counts, precision, ...).
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace hpk
