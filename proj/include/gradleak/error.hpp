#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gradleak {

enum class ErrorCode {
  kInvalidArgument,
  kNonFinite,
  kDidNotConverge,
  kNonSquare,
  kShapeMismatch,
  kEmptyBatch,
  kAlreadyLinear,
  kCurationFailed,
  kNoGroups,
  kGroupOverlap,
  kPatternAmbiguous,
  kSubsetSumAmbiguous,
  kNotApplicable,
  kPreconditionFailed,
  kEmptySubspace,
  kDegenerateWeights,
  kLengthMismatch,
  kNegativeMse,
  kIoError,
};

std::string_view ErrorCodeName(ErrorCode code);

// Base exception for every failure raised by the library. The code is the
// machine-readable part; what() carries a human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the reconstruction pipeline when the gradient does not admit the
// deterministic attack. `stage` names the pipeline stage that gave up and
// `cause` the underlying error code.
class NotApplicable : public Error {
 public:
  NotApplicable(std::string stage, ErrorCode cause, const std::string& detail)
      : Error(ErrorCode::kNotApplicable,
              stage + " (" + std::string(ErrorCodeName(cause)) + "): " + detail),
        stage_(std::move(stage)),
        cause_(cause) {}

  const std::string& stage() const noexcept { return stage_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  ErrorCode cause_;
};

}  // namespace gradleak
