#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ka {

enum class Errc {
  DegeneratePair,
  ZeroVector,
  ShapeMismatch,
  OddSpatialSize,
  UnrecordedTensor,
  GraphCycle,
  BadSize,
  EmptyDataset,
  NonFiniteLoss,
  MissingMirrorTable,
  DegenerateAxis,
  SchemaMismatch,
  ZeroReferenceLength,
  LengthMismatch,
  TooFewSubjects,
  GeometryOverflow,
  IoError,
  ConfigError,
  ParseError,
  GradCheckFailed,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::DegeneratePair: return "DegeneratePair";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::OddSpatialSize: return "OddSpatialSize";
    case Errc::UnrecordedTensor: return "UnrecordedTensor";
    case Errc::GraphCycle: return "GraphCycle";
    case Errc::BadSize: return "BadSize";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::MissingMirrorTable: return "MissingMirrorTable";
    case Errc::DegenerateAxis: return "DegenerateAxis";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::ZeroReferenceLength: return "ZeroReferenceLength";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::TooFewSubjects: return "TooFewSubjects";
    case Errc::GeometryOverflow: return "GeometryOverflow";
    case Errc::IoError: return "IoError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::ParseError: return "ParseError";
    case Errc::GradCheckFailed: return "GradCheckFailed";
  }
  return "Unknown";
}

// Errors that come from the numbers rather than from the inputs' shape or
// the filesystem. The CLI maps these to exit code 3.
constexpr bool is_numerical(Errc code) {
  switch (code) {
    case Errc::DegeneratePair:
    case Errc::ZeroVector:
    case Errc::NonFiniteLoss:
    case Errc::DegenerateAxis:
    case Errc::ZeroReferenceLength:
    case Errc::GraphCycle:
    case Errc::GradCheckFailed:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ka
