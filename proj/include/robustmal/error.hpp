#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace robustmal {

// Machine-readable error categories. The CLI maps validation errors to exit
// code 2 and everything else to exit code 3.
enum class ErrorCode {
  kMalformedPE,
  kUnknownMapping,
  kNotApplicable,
  kBudgetExceeded,
  kDegenerateDataset,
  kEmptyDeltaSet,
  kDimensionMismatch,
  kAllRowsZeroed,
  kDomainTooLarge,
  kNotDetected,
  kNoDetectedMalware,
  kSingleClass,
  kSingleFamily,
  kIntegrityError,
  kMissingArtifact,
  kInvalidConfig,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  bool is_validation() const noexcept {
    return code_ == ErrorCode::kInvalidConfig || code_ == ErrorCode::kUnknownMapping;
  }

 private:
  ErrorCode code_;
};

}  // namespace robustmal
