#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace deltaedit {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  Format,
  Io,
  NonFinite,
  Divergence,
  Config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Format: return "format";
    case ErrorCode::Io: return "io";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

/// Base exception for every failure raised by the library. The code is
/// stable and machine-readable; the message carries the human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Malformed or truncated binary payload. `offset` is the byte position at
/// which the reader detected the problem.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::uint64_t offset)
      : Error(ErrorCode::Format, message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace deltaedit
