// Copyright 2026 The sarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAR_ERROR_HPP
#define SAR_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace sar {

/// Every failure raised by the library carries one of these kinds so callers
/// (and tests) can branch on the category rather than the message text.
enum class ErrorKind {
  // audio
  MalformedContainer,
  UnsupportedEncoding,
  EmptyAudio,
  InvalidArgument,
  // features
  ClipTooShort,
  InvalidBand,
  TooManyCoefficients,
  // ndauto
  ShapeMismatch,
  DegenerateBatch,
  TargetOutOfRange,
  NotScalarLoss,
  // model
  UnknownGroup,
  VersionMismatch,
  CorruptCheckpoint,
  IncompatibleSpec,
  // datakit
  DuplicateId,
  MissingColumn,
  EmptyManifest,
  // trainer
  MissingFeatures,
  NonFiniteLoss,
  EmptyClass,
  // cli
  MalformedRunDir,
  Io,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedContainer: return "MalformedContainer";
    case ErrorKind::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorKind::EmptyAudio: return "EmptyAudio";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ClipTooShort: return "ClipTooShort";
    case ErrorKind::InvalidBand: return "InvalidBand";
    case ErrorKind::TooManyCoefficients: return "TooManyCoefficients";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::TargetOutOfRange: return "TargetOutOfRange";
    case ErrorKind::NotScalarLoss: return "NotScalarLoss";
    case ErrorKind::UnknownGroup: return "UnknownGroup";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::IncompatibleSpec: return "IncompatibleSpec";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::EmptyManifest: return "EmptyManifest";
    case ErrorKind::MissingFeatures: return "MissingFeatures";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::MalformedRunDir: return "MalformedRunDir";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace sar

#endif  // SAR_ERROR_HPP
