#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kvzap {

enum class ErrorKind {
  dimension,
  vocabulary,
  ordering,
  capacity,
  format,
  validation,
  config,
  training,
  unsupported,
  missing_trace,
  sampling,
  conditioning,
  undefined,
  non_finite,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::vocabulary: return "vocabulary";
    case ErrorKind::ordering: return "ordering";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::format: return "format";
    case ErrorKind::validation: return "validation";
    case ErrorKind::config: return "config";
    case ErrorKind::training: return "training";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::missing_trace: return "missing_trace";
    case ErrorKind::sampling: return "sampling";
    case ErrorKind::conditioning: return "conditioning";
    case ErrorKind::undefined: return "undefined";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace kvzap
