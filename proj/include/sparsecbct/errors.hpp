#pragma once

#include <stdexcept>
#include <string>

namespace sparsecbct {

/// Broad classification of failures. The CLI maps `Validation` to exit code 1
/// and everything else to exit code 2.
enum class ErrorKind {
  Validation,      // bad arguments, configs, or preconditions
  Io,              // missing file, unwritable path
  MalformedHeader, // header present but unparsable or inconsistent
  PayloadLength,   // raw payload size disagrees with its header
  UnitMismatch,    // volume carries the wrong unit tag for the operation
  NonFinite,       // NaN/Inf encountered during computation
  Unsupported,     // geometry/arc combinations the reconstructor cannot weight
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::Validation, message);
}

}  // namespace sparsecbct
