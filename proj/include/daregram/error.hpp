#pragma once

#include <stdexcept>
#include <string>

namespace daregram {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or malformed numeric input.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver did not reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Requested rank is zero or exceeds the numerical rank.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Shapes or arguments violate an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced during evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A column is zero in exactly one of two compared matrices.
class DegenerateColumnError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite or exploded.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, long iteration)
      : Error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace daregram
