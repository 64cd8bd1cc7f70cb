#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace unidet {

enum class ErrorKind {
  validation,     // input violates a schema or domain invariant
  configuration,  // inconsistent flags, alias files or thresholds
  lookup,         // unknown dataset / category / id
  contract,       // caller broke a documented precondition
  io,             // file system failure
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::contract: return "contract";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// CLI exit codes: 0 ok, 1 validation, 2 configuration, 3 I/O.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation:
    case ErrorKind::contract: return 1;
    case ErrorKind::configuration:
    case ErrorKind::lookup: return 2;
    case ErrorKind::io: return 3;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// JSON-path of the offending element, e.g. "$.annotations[3].bbox".
  const std::string& path() const noexcept { return path_; }
  /// Id of the offending record (ann_id, image id, ...), when there is one.
  const std::optional<std::int64_t>& record_id() const noexcept { return record_id_; }

  Error& at_path(std::string p) {
    path_ = std::move(p);
    return *this;
  }
  Error& with_record(std::int64_t id) {
    record_id_ = id;
    return *this;
  }

 private:
  ErrorKind kind_;
  std::string path_;
  std::optional<std::int64_t> record_id_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

/// Non-fatal findings (clamped boxes, emptied label spaces, ...).
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag != nullptr) diag->warn(std::move(message));
}

}  // namespace unidet
