#pragma once

#include <stdexcept>
#include <string>

namespace defuse {

enum class ErrorCode {
  CycleDetected,
  NonSquareInput,
  NodeOutOfRange,
  InvalidProbability,
  InvalidSize,
  CovarianceNotPD,
  ZeroVarianceColumn,
  SampleTooSmall,
  DegenerateSample,
  NonFiniteInput,
  EmptyDesign,
  NonFiniteLoss,
  ShapeMismatch,
  NoProgress,
  SizeMismatch,
  SingularDesign,
  EmptyList,
  ParseError,
  IoError,
  InvalidConfig,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::NonSquareInput: return "NonSquareInput";
    case ErrorCode::NodeOutOfRange: return "NodeOutOfRange";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::InvalidSize: return "InvalidSize";
    case ErrorCode::CovarianceNotPD: return "CovarianceNotPD";
    case ErrorCode::ZeroVarianceColumn: return "ZeroVarianceColumn";
    case ErrorCode::SampleTooSmall: return "SampleTooSmall";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::EmptyDesign: return "EmptyDesign";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NoProgress: return "NoProgress";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit status for a library failure: 2 for bad configuration,
/// 3 for unusable input data, 4 for numerical breakdown.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidProbability:
    case ErrorCode::InvalidSize:
    case ErrorCode::EmptyList:
      return 2;
    case ErrorCode::CycleDetected:
    case ErrorCode::NonSquareInput:
    case ErrorCode::NodeOutOfRange:
    case ErrorCode::ZeroVarianceColumn:
    case ErrorCode::SampleTooSmall:
    case ErrorCode::DegenerateSample:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::SizeMismatch:
    case ErrorCode::ParseError:
    case ErrorCode::IoError:
      return 3;
    case ErrorCode::CovarianceNotPD:
    case ErrorCode::EmptyDesign:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NoProgress:
    case ErrorCode::SingularDesign:
      return 4;
  }
  return 4;
}

}  // namespace defuse
