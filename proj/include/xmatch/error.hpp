#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xmatch {

/// Data or input problem (bad file contents, inconsistent model, degenerate
/// training set). The CLI maps these to exit code 1.
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

/// Tensor shapes or model layouts that do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace xmatch
