// Copyright 2026 The knn-tts Authors
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace knntts {

/// Error classes. Everything except `kIo` is a validation failure and maps to
/// CLI exit code 2; `kIo` maps to exit code 1.
enum class ErrorCode {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kSizeMismatch,
  kNonFinite,
  kEmptyShape,
  kInvalidFrameRate,
  kDimensionMismatch,
  kFrameRateMismatch,
  kEmptyInput,
  kZeroNorm,
  kInvalidArgument,
  kDurationExceeded,
  kUnknownUtterance,
  kUnknownSpeaker,
  kGroupTooSmall,
  kSeparationUnattainable,
  kBadManifest,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kSizeMismatch: return "size_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kEmptyShape: return "empty_shape";
    case ErrorCode::kInvalidFrameRate: return "invalid_frame_rate";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kFrameRateMismatch: return "frame_rate_mismatch";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kZeroNorm: return "zero_norm";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDurationExceeded: return "duration_exceeded";
    case ErrorCode::kUnknownUtterance: return "unknown_utterance";
    case ErrorCode::kUnknownSpeaker: return "unknown_speaker";
    case ErrorCode::kGroupTooSmall: return "group_too_small";
    case ErrorCode::kSeparationUnattainable: return "separation_unattainable";
    case ErrorCode::kBadManifest: return "bad_manifest";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  bool is_io() const noexcept { return code_ == ErrorCode::kIo; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace knntts
