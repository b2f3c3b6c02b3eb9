#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spherevlad {

enum class ErrorCode {
  // ingest
  UnreadableFile,
  MalformedRecord,
  MissingPose,
  EmptyInput,
  NoRevisitsFound,
  UnknownRecordingLabel,
  InsufficientCandidates,
  // sphere / harmonic
  OriginPoint,
  BadGridShape,
  BandwidthMismatch,
  ChannelMismatch,
  // model / training
  ShapeMismatch,
  UninitializedWeights,
  DimensionMismatch,
  NonFiniteLoss,
  // eval
  EmptyDatabase,
  // configuration and usage
  BadConfig,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::MissingPose: return "MissingPose";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NoRevisitsFound: return "NoRevisitsFound";
    case ErrorCode::UnknownRecordingLabel: return "UnknownRecordingLabel";
    case ErrorCode::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::OriginPoint: return "OriginPoint";
    case ErrorCode::BadGridShape: return "BadGridShape";
    case ErrorCode::BandwidthMismatch: return "BandwidthMismatch";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UninitializedWeights: return "UninitializedWeights";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace spherevlad
