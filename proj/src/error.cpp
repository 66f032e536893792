#include "glandscreen/error.hpp"

namespace glandscreen {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::DegenerateStains: return "DegenerateStains";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::UnknownBackbone: return "UnknownBackbone";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::NoConvFeatures: return "NoConvFeatures";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace glandscreen
