#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maskclip {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (manifest line, config file, archive header).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor or weight shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in logits or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Missing, truncated or version-mismatched checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Unknown configuration key or a bad configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A configuration key that does not exist in the key tree.
class UnknownKeyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Two overrides that set the same key to different values.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskclip
