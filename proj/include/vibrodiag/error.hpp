// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vibrodiag {

enum class ErrorCode {
  kInvalidArgument,
  kNonPositiveRate,
  kDegenerateSignal,
  kMalformedWav,
  kIoFailure,
  kInvalidSpec,
  kUnknownTemplate,
  kEmptyManifest,
  kUnparseable,
  kUnknownClass,
  kInvalidLayout,
  kShapeMismatch,
  kTooShort,
  kSlotMismatch,
  kEmptyBatch,
  kNonFiniteLoss,
  kBadMagic,
  kVersionMismatch,
  kTruncatedFile,
  kUnparseableOutput,
  kSessionNotFound,
  kLengthMismatch,
};

const char* to_string(ErrorCode code);

/// Every recoverable failure in the library is reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace vibrodiag
