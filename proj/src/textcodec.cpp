// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/textcodec.hpp"

#include <cstdio>

#include "vibrodiag/error.hpp"

namespace vibrodiag {
namespace vocab {

nlohmann::json to_json() {
  nlohmann::json table = nlohmann::json::object();
  char name[16];
  for (int b = 0; b < 256; ++b) {
    std::snprintf(name, sizeof(name), "byte_%02x", b);
    table[name] = b;
  }
  table["<pad>"] = kPad;
  table["<bos>"] = kBos;
  table["<eos>"] = kEos;
  table["<audio>"] = kAudio;
  table["<user>"] = kUser;
  table["<assistant>"] = kAssistant;
  return table;
}

bool matches(const nlohmann::json& table) { return table == to_json(); }

}  // namespace vocab

namespace textcodec {

TokenSeq encode(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string sanitize_utf8(std::string_view bytes) {
  static constexpr char kReplacement[] = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(bytes.size());
  const auto at = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
  std::size_t i = 0;
  while (i < bytes.size()) {
    const unsigned char b = at(i);
    int need = 0;
    unsigned char lo = 0x80, hi = 0xBF;
    if (b < 0x80) {
      out.push_back(static_cast<char>(b));
      ++i;
      continue;
    } else if (b >= 0xC2 && b <= 0xDF) {
      need = 1;
    } else if (b >= 0xE0 && b <= 0xEF) {
      need = 2;
      if (b == 0xE0) lo = 0xA0;
      if (b == 0xED) hi = 0x9F;
    } else if (b >= 0xF0 && b <= 0xF4) {
      need = 3;
      if (b == 0xF0) lo = 0x90;
      if (b == 0xF4) hi = 0x8F;
    } else {
      out += kReplacement;
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    for (int k = 0; k < need; ++k, ++j) {
      if (j >= bytes.size()) break;
      const unsigned char c = at(j);
      if (c < (k == 0 ? lo : 0x80) || c > (k == 0 ? hi : 0xBF)) break;
    }
    if (j == i + 1 + static_cast<std::size_t>(need)) {
      out.append(bytes.substr(i, j - i));
    } else {
      out += kReplacement;
    }
    i = j;
  }
  return out;
}

std::string decode(std::span<const TokenId> ids) {
  if (!ids.empty() && ids.front() == vocab::kBos) ids = ids.subspan(1);
  if (!ids.empty() && ids.back() == vocab::kEos) ids = ids.first(ids.size() - 1);
  std::string text;
  text.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || id > 255) fail(ErrorCode::kInvalidArgument, "cannot decode token " + std::to_string(id));
    text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return text;
}

namespace {

void append(TokenSeq& ids, std::string_view text) {
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
}

void head(TokenSeq& ids, std::string_view question, int n_audio_tokens) {
  if (n_audio_tokens < 1) fail(ErrorCode::kInvalidLayout, "prompt needs at least one audio token");
  ids.push_back(vocab::kBos);
  ids.insert(ids.end(), static_cast<std::size_t>(n_audio_tokens), vocab::kAudio);
  ids.push_back(vocab::kUser);
  append(ids, question);
  ids.push_back(vocab::kAssistant);
}

}  // namespace

TokenSeq build_prompt(std::string_view question, int n_audio_tokens,
                      std::optional<std::string_view> target) {
  TokenSeq ids;
  head(ids, question, n_audio_tokens);
  if (target) {
    append(ids, *target);
    ids.push_back(vocab::kEos);
  }
  return ids;
}

TokenSeq build_followup_prompt(std::string_view diagnosis_question, int n_audio_tokens,
                               std::string_view label, std::span<const Turn> history,
                               std::string_view question,
                               std::optional<std::string_view> target) {
  TokenSeq ids;
  head(ids, diagnosis_question, n_audio_tokens);
  append(ids, label);
  for (const Turn& turn : history) {
    ids.push_back(vocab::kUser);
    append(ids, turn.question);
    ids.push_back(vocab::kAssistant);
    append(ids, turn.response);
  }
  ids.push_back(vocab::kUser);
  append(ids, question);
  ids.push_back(vocab::kAssistant);
  if (target) {
    append(ids, *target);
    ids.push_back(vocab::kEos);
  }
  return ids;
}

}  // namespace textcodec
}  // namespace vibrodiag
