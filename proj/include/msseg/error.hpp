#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace msseg {

enum class ErrorCode {
  MissingFile,
  MalformedHeader,
  PayloadSizeMismatch,
  IoFailure,
  EmptyMask,
  DegenerateVolume,
  VolumeTooSmall,
  LabelOutOfRange,
  ShapeNotDivisible,
  ShapeMismatch,
  ChannelMismatch,
  LengthMismatch,
  NoValidPatch,
  NotScalarLoss,
  InvalidConfig,
  VersionMismatch,
  ConfigMismatch,
  DivergedLoss,
  MissingCounterpart,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace msseg
