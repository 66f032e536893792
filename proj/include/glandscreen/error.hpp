#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glandscreen {

enum class ErrorCode {
  InvalidArgument,
  InsufficientTissue,
  DegenerateStains,
  EmptyClass,
  UnreadableFile,
  UnknownBackbone,
  DivergedTraining,
  NoConvFeatures,
  DimensionMismatch,
  LengthMismatch,
  EmptyMatrix,
  IoError,
  BadCheckpoint,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Domain error carrying a stable code; the CLI prints `code_name(): what()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return to_string(code_); }

 private:
  ErrorCode code_;
};

}  // namespace glandscreen
