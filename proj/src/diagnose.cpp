// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/diagnose.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

#include "vibrodiag/error.hpp"

namespace vibrodiag {

std::string_view to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::kExact: return "exact";
    case ParseStatus::kSubstring: return "substring";
    case ParseStatus::kUnparseable: return "unparseable";
  }
  return "unparseable";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Generated bytes need not be valid UTF-8; text leaving the model always is.
std::string bytes_to_text(const TokenSeq& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (auto t : tokens) out.push_back(static_cast<char>(t));
  return textcodec::sanitize_utf8(out);
}

}  // namespace

std::pair<std::optional<std::string>, ParseStatus> parse_label(std::string_view text,
                                                               const LabelSet& labels) {
  if (labels.index_of(text) >= 0) return {std::string(text), ParseStatus::kExact};
  const std::string hay = lower(text);
  const std::string* best = nullptr;
  bool tie = false;
  for (const auto& e : labels.entries) {
    if (hay.find(lower(e.label)) == std::string::npos) continue;
    if (!best || e.label.size() > best->size()) {
      best = &e.label;
      tie = false;
    } else if (e.label.size() == best->size()) {
      tie = true;
    }
  }
  if (!best || tie) return {std::nullopt, ParseStatus::kUnparseable};
  return {*best, ParseStatus::kSubstring};
}

Diagnoser::Diagnoser(ModelParams params, LabelSet labels, int max_len)
    : params_(std::move(params)),
      weights_(merge_adapters<float>(params_)),
      labels_(std::move(labels)),
      max_len_(max_len) {
  if (max_len_ < 1) fail(ErrorCode::kInvalidArgument, "max_len must be >= 1");
}

DecodeResult Diagnoser::greedy_decode(const TokenSeq& prompt, const AudioEmbedding& audio,
                                      int max_len) const {
  if (max_len < 1) fail(ErrorCode::kInvalidArgument, "max_len must be >= 1");
  DecodeResult out;
  TokenSeq seq = prompt;
  const int room = params_.cfg.max_seq - static_cast<int>(prompt.size());
  const int steps = std::min(max_len, room);
  for (int i = 0; i < steps; ++i) {
    const auto logits = net::decoder_logits(params_, weights_, seq, audio,
                                            {static_cast<int>(seq.size()) - 1});
    const auto row = logits.row(0);
    // max_element returns the first maximum, i.e. the lowest id.
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (vocab::is_special(best)) return out;
    out.tokens.push_back(best);
    seq.push_back(best);
  }
  out.truncated = true;
  return out;
}

AudioEmbedding Diagnoser::encode(const WavClip& clip) const {
  Signal sig = sigproc::dequantize_pcm16(clip);
  WavClip prepared = sigproc::prepare_clip(sig);
  // The model is trained on one-second windows; longer clips use the first.
  const auto window = static_cast<std::size_t>(params_.cfg.sample_rate_hz);
  if (prepared.pcm.size() > window) prepared.pcm.resize(window);
  return net::encode_mel(net::mel_frontend(prepared, params_.cfg), params_, weights_);
}

Diagnosis Diagnoser::diagnose(const WavClip& clip) const {
  DialogueSession session;
  return diagnose(clip, session);
}

Diagnosis Diagnoser::diagnose(const WavClip& clip, DialogueSession& session) const {
  session.audio = encode(clip);
  session.history.clear();
  const auto prompt =
      textcodec::build_prompt(kDiagnosisQuestion, static_cast<int>(session.audio.rows()));
  const auto gen = greedy_decode(prompt, session.audio, max_len_);
  Diagnosis d;
  d.raw_text = bytes_to_text(gen.tokens);
  d.truncated = gen.truncated;
  std::tie(d.parsed_label, d.status) = parse_label(d.raw_text, labels_);
  session.label = d.raw_text;
  return d;
}

std::string Diagnoser::follow_up(DialogueSession& session, std::string_view question) const {
  if (session.audio.empty()) fail(ErrorCode::kSessionNotFound, "session has no diagnosis");
  const auto prompt = textcodec::build_followup_prompt(
      kDiagnosisQuestion, static_cast<int>(session.audio.rows()), session.label, session.history,
      question);
  const auto gen = greedy_decode(prompt, session.audio, max_len_);
  std::string answer = bytes_to_text(gen.tokens);
  session.history.push_back({std::string(question), answer});
  return answer;
}

}  // namespace vibrodiag
