#include "expertmatch/error.hpp"

namespace em {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kState: return "state";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kCountMismatch: return "count_mismatch";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kCapability: return "capability";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kEmpty: return "empty";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace em
