#pragma once

#include <stdexcept>
#include <string>

namespace volmap {

/// Error kinds raised by the library. Each kind belongs to one of three
/// families (config, data, numeric) which the CLI maps onto exit codes.
enum class Errc {
  // configuration
  kBadConfig,
  kUnknownKey,
  kParameterDomain,
  // data / files
  kUnreadableFile,
  kUnwritablePath,
  kMalformedHeader,
  kSizeMismatch,
  kMalformedLine,
  kNonMonotonicTimestamps,
  kBadQuaternion,
  kDimensionMismatch,
  kClassOutOfRange,
  kEmptyOverlap,
  kInsufficientLength,
  kPathTooShort,
  // numeric
  kDegenerateIntrinsics,
  kInvalidDepth,
  kInvalidPoint,
  kInvalidPose,
  kDegenerateConfiguration,
};

enum class ErrorFamily { kConfig = 1, kData = 2, kNumeric = 3 };

constexpr ErrorFamily family(Errc code) noexcept {
  switch (code) {
    case Errc::kBadConfig:
    case Errc::kUnknownKey:
    case Errc::kParameterDomain:
      return ErrorFamily::kConfig;
    case Errc::kDegenerateIntrinsics:
    case Errc::kInvalidDepth:
    case Errc::kInvalidPoint:
    case Errc::kInvalidPose:
    case Errc::kDegenerateConfiguration:
      return ErrorFamily::kNumeric;
    default:
      return ErrorFamily::kData;
  }
}

constexpr const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::kBadConfig: return "bad-config";
    case Errc::kUnknownKey: return "unknown-key";
    case Errc::kParameterDomain: return "parameter-domain";
    case Errc::kUnreadableFile: return "unreadable-file";
    case Errc::kUnwritablePath: return "unwritable-path";
    case Errc::kMalformedHeader: return "malformed-header";
    case Errc::kSizeMismatch: return "size-mismatch";
    case Errc::kMalformedLine: return "malformed-line";
    case Errc::kNonMonotonicTimestamps: return "non-monotonic-timestamps";
    case Errc::kBadQuaternion: return "bad-quaternion";
    case Errc::kDimensionMismatch: return "dimension-mismatch";
    case Errc::kClassOutOfRange: return "class-out-of-range";
    case Errc::kEmptyOverlap: return "empty-overlap";
    case Errc::kInsufficientLength: return "insufficient-length";
    case Errc::kPathTooShort: return "path-too-short";
    case Errc::kDegenerateIntrinsics: return "degenerate-intrinsics";
    case Errc::kInvalidDepth: return "invalid-depth";
    case Errc::kInvalidPoint: return "invalid-point";
    case Errc::kInvalidPose: return "invalid-pose";
    case Errc::kDegenerateConfiguration: return "degenerate-configuration";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorFamily family() const noexcept { return volmap::family(code_); }
  int exit_code() const noexcept { return static_cast<int>(family()); }

 private:
  Errc code_;
};

}  // namespace volmap
