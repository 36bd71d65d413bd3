// Copyright 2026 The specemo Authors
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

#ifndef SPECEMO_ERROR_H_
#define SPECEMO_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace specemo {

enum class ErrorKind {
  kIo,
  kMalformedHeader,
  kUnsupportedEncoding,
  kEmptyAudio,
  kUnknownLabel,
  kInvalidStyle,
  kMissingColumn,
  kDuplicatePath,
  kInvalidArgument,
  kDegenerateFilter,
  kShapeMismatch,
  kOddSpatialDim,
  kLabelOutOfRange,
  kNonFinite,
  kMissingTensor,
  kChecksumMismatch,
  kSingleClass,
  kEmptySplit,
  kTooFewSpeakers,
  kTooFewSamplesPerClass,
  kLabelSpaceMismatch,
  kLengthMismatch,
  kMissingReport,
  kDigestMismatch,
  kConfig,
};

std::string_view ErrorKindName(ErrorKind kind);

// All library failures are reported through this exception; `kind()` lets
// callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace specemo

#endif  // SPECEMO_ERROR_H_
