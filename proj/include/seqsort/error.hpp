#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqsort {

enum class ErrorCode {
  MalformedStream,
  UnsupportedTransferSyntax,
  MissingMandatoryAttribute,
  PixelDecodeFailure,
  EmptyInput,
  InvalidLabelMap,
  InsufficientStudies,
  Unlabeled,
  ShapeMismatch,
  OddSpatialDim,
  BatchTooSmall,
  IndexOutOfRange,
  InvalidClass,
  EmptySplit,
  CheckpointIOFailure,
  CorruptCheckpoint,
  VersionMismatch,
  IOFailure,
  ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status and tests can match on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedStream: return "MalformedStream";
    case ErrorCode::UnsupportedTransferSyntax: return "UnsupportedTransferSyntax";
    case ErrorCode::MissingMandatoryAttribute: return "MissingMandatoryAttribute";
    case ErrorCode::PixelDecodeFailure: return "PixelDecodeFailure";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidLabelMap: return "InvalidLabelMap";
    case ErrorCode::InsufficientStudies: return "InsufficientStudies";
    case ErrorCode::Unlabeled: return "Unlabeled";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddSpatialDim: return "OddSpatialDim";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidClass: return "InvalidClass";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::CheckpointIOFailure: return "CheckpointIOFailure";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace seqsort
