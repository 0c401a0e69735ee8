#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ulw {

enum class Errc {
  // edf ingest
  TruncatedHeader,
  MalformedField,
  InvariantViolation,
  TruncatedData,
  MalformedTal,
  NonMonotonicOnsets,
  MissingChannel,
  DurationMismatch,
  UnsupportedSampleRate,
  // preprocessing
  InvalidBand,
  SignalTooShort,
  UnknownLabel,
  AllWake,
  EpochAlignmentError,
  BadMagic,
  VersionMismatch,
  ChecksumMismatch,
  // numerics / model
  ShapeMismatch,
  DegenerateBatch,
  BadConfig,
  NonFiniteGradient,
  // training / evaluation
  TooFewSubjects,
  LengthMismatch,
  LabelOutOfRange,
  EmptyMatrix,
  Io,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::TruncatedHeader: return "TruncatedHeader";
    case Errc::MalformedField: return "MalformedField";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::TruncatedData: return "TruncatedData";
    case Errc::MalformedTal: return "MalformedTal";
    case Errc::NonMonotonicOnsets: return "NonMonotonicOnsets";
    case Errc::MissingChannel: return "MissingChannel";
    case Errc::DurationMismatch: return "DurationMismatch";
    case Errc::UnsupportedSampleRate: return "UnsupportedSampleRate";
    case Errc::InvalidBand: return "InvalidBand";
    case Errc::SignalTooShort: return "SignalTooShort";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::AllWake: return "AllWake";
    case Errc::EpochAlignmentError: return "EpochAlignmentError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DegenerateBatch: return "DegenerateBatch";
    case Errc::BadConfig: return "BadConfig";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::TooFewSubjects: return "TooFewSubjects";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the categories above;
/// what() is prefixed with the category name so CLI diagnostics stay greppable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace ulw
