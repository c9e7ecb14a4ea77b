#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lucid {

// Base for every error the library raises on bad input or violated
// preconditions. Internal invariant failures use std::logic_error instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class OrderingError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace lucid
