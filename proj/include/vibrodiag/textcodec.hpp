// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace vibrodiag {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

/// Byte-level vocabulary: ids 0-255 are raw bytes, specials follow.
namespace vocab {
inline constexpr TokenId kPad = 256;
inline constexpr TokenId kBos = 257;
inline constexpr TokenId kEos = 258;
inline constexpr TokenId kAudio = 259;
inline constexpr TokenId kUser = 260;
inline constexpr TokenId kAssistant = 261;
inline constexpr int kSize = 262;

inline bool is_special(TokenId id) { return id >= kPad; }

/// {"<pad>": 256, ..., "byte_00": 0, ...} for checkpoint manifests.
nlohmann::json to_json();
/// True when `table` describes exactly this vocabulary.
bool matches(const nlohmann::json& table);
}  // namespace vocab

namespace textcodec {

TokenSeq encode(std::string_view text);

/// Strips a leading BOS and trailing EOS; any other special is rejected.
std::string decode(std::span<const TokenId> ids);

/// Replaces every ill-formed UTF-8 sequence with U+FFFD (maximal subparts).
std::string sanitize_utf8(std::string_view bytes);

/// BOS, AUDIO x n, USER, question, ASSISTANT[, target, EOS]
TokenSeq build_prompt(std::string_view question, int n_audio_tokens,
                      std::optional<std::string_view> target = std::nullopt);

/// One previous follow-up exchange.
struct Turn {
  std::string question;
  std::string response;
};

/// Diagnosis prompt followed by the generated label, every earlier turn and
/// the new question, ending at ASSISTANT (or at the target plus EOS).
TokenSeq build_followup_prompt(std::string_view diagnosis_question, int n_audio_tokens,
                               std::string_view label, std::span<const Turn> history,
                               std::string_view question,
                               std::optional<std::string_view> target = std::nullopt);

}  // namespace textcodec
}  // namespace vibrodiag
