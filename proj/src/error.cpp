#include "robustmal/error.hpp"

namespace robustmal {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedPE: return "MalformedPE";
    case ErrorCode::kUnknownMapping: return "UnknownMapping";
    case ErrorCode::kNotApplicable: return "NotApplicable";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kDegenerateDataset: return "DegenerateDataset";
    case ErrorCode::kEmptyDeltaSet: return "EmptyDeltaSet";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kAllRowsZeroed: return "AllRowsZeroed";
    case ErrorCode::kDomainTooLarge: return "DomainTooLarge";
    case ErrorCode::kNotDetected: return "NotDetected";
    case ErrorCode::kNoDetectedMalware: return "NoDetectedMalware";
    case ErrorCode::kSingleClass: return "SingleClass";
    case ErrorCode::kSingleFamily: return "SingleFamily";
    case ErrorCode::kIntegrityError: return "IntegrityError";
    case ErrorCode::kMissingArtifact: return "MissingArtifact";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace robustmal
