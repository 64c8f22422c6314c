#pragma once

#include <stdexcept>
#include <string>

namespace lindlab {

// Error taxonomy. Codes marked "validation" describe rejected inputs and map
// to CLI exit code 2; the rest are runtime/numerical failures (exit code 3).
enum class ErrorCode {
  // validation
  BadAlphabet,
  EmptyRow,
  EmptyColumn,
  NonMixing,
  NonPositiveRoof,
  MissingWord,
  BadWord,
  DeltaTooLarge,
  EmptyWindow,
  NonPositiveQ,
  ZeroVariance,
  MissingSeries,
  BadConfig,
  // runtime / numerical
  BudgetExceeded,
  NoTransition,
  WindowOutOfRange,
  CapExceeded,
  NonConvergence,
  IoFailure,
};

const char* error_code_name(ErrorCode code);

// True for codes that describe rejected inputs rather than failed computation.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace lindlab
