#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace voxfeat {

enum class ErrorKind {
  InvalidArgument,
  Io,
  Format,
  Truncated,
  ShapeMismatch,
  Precondition,
  NonFinite,
  MissingFeatures,
  StaleFeatures,
  NotFound,
  Conflict,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::MissingFeatures: return "missing-features";
    case ErrorKind::StaleFeatures: return "stale-features";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Conflict: return "conflict";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so the CLI and the HTTP
// layer can map it to an exit code / status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::string field = {})
      : std::runtime_error(what), kind_(kind), field_(std::move(field)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Document path of the offending field, when the error is about one.
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorKind kind_;
  std::string field_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what, std::string field = {}) {
  throw Error(kind, what, std::move(field));
}

// Templated so literal messages are only turned into strings on failure.
template <class What, class Field = const char*>
inline void require(bool cond, ErrorKind kind, What&& what, Field&& field = "") {
  if (!cond) [[unlikely]]
    fail(kind, std::string(std::forward<What>(what)), std::string(std::forward<Field>(field)));
}

}  // namespace voxfeat
