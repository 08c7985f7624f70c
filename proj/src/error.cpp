#include "mptlml/error.hpp"

namespace mptlml {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidMaskSize: return "InvalidMaskSize";
    case ErrorCode::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorCode::EmptyCurve: return "EmptyCurve";
    case ErrorCode::MalformedCurveFile: return "MalformedCurveFile";
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace mptlml
