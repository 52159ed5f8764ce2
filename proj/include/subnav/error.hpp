#pragma once

#include <stdexcept>
#include <string>

namespace subnav {

// Base for every error raised by the library. The CLI maps ValidationError
// to exit status 1 and everything else to a diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Well-formed input that breaks a structural rule (root count, alignment, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace subnav
