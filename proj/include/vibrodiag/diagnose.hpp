// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vibrodiag/corpusgen.hpp"
#include "vibrodiag/net.hpp"
#include "vibrodiag/sigproc.hpp"
#include "vibrodiag/textcodec.hpp"

namespace vibrodiag {

inline constexpr std::string_view kDiagnosisQuestion = "what is the fault?";
inline constexpr int kDefaultMaxLen = 64;

struct DecodeResult {
  TokenSeq tokens;         // generated byte tokens, stop token excluded
  bool truncated = false;  // max_len reached before a stop token
};

enum class ParseStatus { kExact, kSubstring, kUnparseable };

std::string_view to_string(ParseStatus status);

struct Diagnosis {
  std::string raw_text;
  std::optional<std::string> parsed_label;
  ParseStatus status = ParseStatus::kUnparseable;
  bool truncated = false;
};

/// Exact match against the label set, then the longest label contained in
/// the text ignoring ASCII case. Ambiguous or absent matches are unparseable.
std::pair<std::optional<std::string>, ParseStatus> parse_label(std::string_view text,
                                                               const LabelSet& labels);

struct DialogueSession {
  std::string id;
  AudioEmbedding audio;
  std::string label;  // generated diagnosis text
  std::vector<textcodec::Turn> history;
};

/// A loaded model with its merged weights, shared read-only by callers.
class Diagnoser {
 public:
  Diagnoser(ModelParams params, LabelSet labels, int max_len = kDefaultMaxLen);

  const ModelParams& params() const { return params_; }
  const LabelSet& labels() const { return labels_; }
  int max_len() const { return max_len_; }

  /// Argmax at every step, lowest token id on ties; stops at any special
  /// token or after max_len tokens.
  DecodeResult greedy_decode(const TokenSeq& prompt, const AudioEmbedding& audio,
                             int max_len) const;

  AudioEmbedding encode(const WavClip& clip) const;

  Diagnosis diagnose(const WavClip& clip) const;
  /// Diagnosis plus a session holding the audio embedding for follow-ups.
  Diagnosis diagnose(const WavClip& clip, DialogueSession& session) const;

  /// Answers `question` given the diagnosis and every earlier turn, then
  /// appends the turn to the session.
  std::string follow_up(DialogueSession& session, std::string_view question) const;

 private:
  ModelParams params_;
  MergedWeights<float> weights_;
  LabelSet labels_;
  int max_len_;
};

}  // namespace vibrodiag
