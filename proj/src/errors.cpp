#include "cma/errors.hpp"

namespace cma {

const char* to_string(FormatErrorKind kind) {
    switch (kind) {
    case FormatErrorKind::io: return "io";
    case FormatErrorKind::bad_magic: return "bad-magic";
    case FormatErrorKind::unsupported_version: return "unsupported-version";
    case FormatErrorKind::truncated_header: return "truncated-header";
    case FormatErrorKind::truncated_payload: return "truncated-payload";
    case FormatErrorKind::zero_dimension: return "zero-dimension";
    case FormatErrorKind::empty_sequence: return "empty-sequence";
    case FormatErrorKind::invalid_label: return "invalid-label";
    case FormatErrorKind::invalid_id: return "invalid-id";
    case FormatErrorKind::duplicate_id: return "duplicate-id";
    case FormatErrorKind::non_finite_value: return "non-finite-value";
    case FormatErrorKind::trailing_bytes: return "trailing-bytes";
    case FormatErrorKind::bad_tensor: return "bad-tensor";
    }
    return "unknown";
}

FormatError::FormatError(FormatErrorKind kind, std::string detail, std::uint64_t offset)
    : Error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

}  // namespace cma
