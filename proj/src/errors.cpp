#include "sparsecbct/errors.hpp"

namespace sparsecbct {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Io: return "io";
    case ErrorKind::MalformedHeader: return "malformed-header";
    case ErrorKind::PayloadLength: return "payload-length";
    case ErrorKind::UnitMismatch: return "unit-mismatch";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::Unsupported: return "unsupported";
  }
  return "unknown";
}

}  // namespace sparsecbct
