// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/error.hpp"

namespace vibrodiag {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonPositiveRate: return "NonPositiveRate";
    case ErrorCode::kDegenerateSignal: return "DegenerateSignal";
    case ErrorCode::kMalformedWav: return "MalformedWav";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kUnknownTemplate: return "UnknownTemplate";
    case ErrorCode::kEmptyManifest: return "EmptyManifest";
    case ErrorCode::kUnparseable: return "Unparseable";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kInvalidLayout: return "InvalidLayout";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kSlotMismatch: return "SlotMismatch";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kUnparseableOutput: return "UnparseableOutput";
    case ErrorCode::kSessionNotFound: return "SessionNotFound";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
  }
  return "Unknown";
}

}  // namespace vibrodiag
