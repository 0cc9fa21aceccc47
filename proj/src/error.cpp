#include "msseg/error.hpp"

namespace msseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::PayloadSizeMismatch: return "PayloadSizeMismatch";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::DegenerateVolume: return "DegenerateVolume";
    case ErrorCode::VolumeTooSmall: return "VolumeTooSmall";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ShapeNotDivisible: return "ShapeNotDivisible";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoValidPatch: return "NoValidPatch";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MissingCounterpart: return "MissingCounterpart";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace msseg
