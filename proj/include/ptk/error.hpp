#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ptk {

enum class ErrorKind {
  Parse,
  EmptyCloud,
  UnsupportedFormat,
  OutOfBounds,
  TargetExceedsInput,
  StrategyParamMissing,
  IndexOutOfRange,
  Io,
  ShapeMismatch,
  EmptyMask,
  GradMismatch,
  DivergenceDetected,
  InvalidArgument,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::TargetExceedsInput: return "TargetExceedsInput";
    case ErrorKind::StrategyParamMissing: return "StrategyParamMissing";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::GradMismatch: return "GradMismatch";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// Base of every exception thrown by the library. `kind()` identifies the
// failure class so callers (the CLI, bindings) can map it to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Malformed input. `line()` is 1-based, or 0 when the problem is not tied to
// a single line (e.g. a PLY vertex count mismatch).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ptk
