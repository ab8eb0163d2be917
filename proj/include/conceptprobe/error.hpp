#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace conceptprobe {

enum class ErrorCode {
  InvalidInput,
  DimensionMismatch,
  DegenerateVector,
  EncoderMismatch,
  MissingEntry,
  ParseError,
  InvalidState,
  ParseFailure,
  GeneratorFailure,
  TransportError,
  ProviderRefusal,
  InvalidHandle,
  ProviderContractViolation,
  EmptySet,
  NoQualifyingRuns,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateVector: return "DegenerateVector";
    case ErrorCode::EncoderMismatch: return "EncoderMismatch";
    case ErrorCode::MissingEntry: return "MissingEntry";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidState: return "InvalidState";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::GeneratorFailure: return "GeneratorFailure";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::ProviderRefusal: return "ProviderRefusal";
    case ErrorCode::InvalidHandle: return "InvalidHandle";
    case ErrorCode::ProviderContractViolation: return "ProviderContractViolation";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::NoQualifyingRuns: return "NoQualifyingRuns";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Transport failures are the only class worth retrying at the request level.
  bool retryable() const noexcept { return code_ == ErrorCode::TransportError; }

 private:
  ErrorCode code_;
};

}  // namespace conceptprobe
