#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace foldnet {

// Base of every error raised by the library. The CLI maps these to exit status 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Arguments or data that violate a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. `line` is 1-based; 0 when the error is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        source_(source),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

// Binary checkpoint / template database with a bad header or truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  TrainingError(std::size_t batch_id, const std::string& what)
      : Error(what), batch_id_(batch_id) {}
  std::size_t batch_id() const noexcept { return batch_id_; }

 private:
  std::size_t batch_id_;
};

}  // namespace foldnet
