#pragma once

#include <stdexcept>
#include <string>

namespace em {

// Values mirror em_status in c_api.h.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kDimension = 2,
  kState = 3,
  kNonFinite = 4,
  kIo = 5,
  kBadMagic = 6,
  kTruncated = 7,
  kChecksum = 8,
  kVersion = 9,
  kCountMismatch = 10,
  kNotFound = 11,
  kConflict = 12,
  kCapability = 13,
  kDegenerate = 14,
  kEmpty = 15,
  kInternal = 16,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace em
