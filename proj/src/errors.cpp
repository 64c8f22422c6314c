#include "lindlab/errors.hpp"

namespace lindlab {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadAlphabet: return "BadAlphabet";
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::EmptyColumn: return "EmptyColumn";
    case ErrorCode::NonMixing: return "NonMixing";
    case ErrorCode::NonPositiveRoof: return "NonPositiveRoof";
    case ErrorCode::MissingWord: return "MissingWord";
    case ErrorCode::BadWord: return "BadWord";
    case ErrorCode::DeltaTooLarge: return "DeltaTooLarge";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::NonPositiveQ: return "NonPositiveQ";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::MissingSeries: return "MissingSeries";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::NoTransition: return "NoTransition";
    case ErrorCode::WindowOutOfRange: return "WindowOutOfRange";
    case ErrorCode::CapExceeded: return "CapExceeded";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadAlphabet:
    case ErrorCode::EmptyRow:
    case ErrorCode::EmptyColumn:
    case ErrorCode::NonMixing:
    case ErrorCode::NonPositiveRoof:
    case ErrorCode::MissingWord:
    case ErrorCode::BadWord:
    case ErrorCode::DeltaTooLarge:
    case ErrorCode::EmptyWindow:
    case ErrorCode::NonPositiveQ:
    case ErrorCode::ZeroVariance:
    case ErrorCode::MissingSeries:
    case ErrorCode::BadConfig:
      return true;
    default:
      return false;
  }
}

}  // namespace lindlab
