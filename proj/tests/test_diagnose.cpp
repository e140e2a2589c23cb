// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "test_util.hpp"
#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/synthbench.hpp"

using namespace vibrodiag;
using namespace vibrodiag::testing;

namespace {

WavClip clip_of(int cls, double seconds, std::uint64_t seed) {
  return sigproc::prepare_clip(
      synthbench::synth_signal(synthbench::toy_classes()[static_cast<std::size_t>(cls)], seconds, 16000, seed));
}

ModelParams noisy_model(std::uint64_t seed) {
  auto p = init_params(ModelConfig{});
  perturb_adapters(p, 0.3, seed);
  return p;
}

// Independent greedy loop over next-token distributions.
std::string greedy_oracle(const ModelParams& params, TokenSeq seq, const AudioEmbedding& audio, int max_len) {
  std::string out;
  for (int i = 0; i < max_len; ++i) {
    const auto p = net::forward_next_token(params, seq, audio);
    int best = 0;
    for (int t = 1; t < static_cast<int>(p.size()); ++t) {
      if (p[static_cast<std::size_t>(t)] > p[static_cast<std::size_t>(best)]) best = t;
    }
    if (best >= 256) break;
    out.push_back(static_cast<char>(best));
    seq.push_back(best);
  }
  return out;
}

}  // namespace

TEST_CASE("parse_label: exact, substring, longest match, ties") {
  const auto toy = LabelSet::toy();
  CHECK(parse_label("roller fault", toy) == std::pair{std::optional<std::string>("roller fault"), ParseStatus::kExact});
  CHECK(parse_label("The bearing shows an Outer Race Fault.", toy) ==
        std::pair{std::optional<std::string>("outer race fault"), ParseStatus::kSubstring});
  CHECK(parse_label("inner race fault or outer race fault", toy).second == ParseStatus::kUnparseable);
  CHECK(parse_label("roler race fault", toy).second == ParseStatus::kUnparseable);
  CHECK(parse_label("", toy).second == ParseStatus::kUnparseable);
  CHECK_FALSE(parse_label("", toy).first);
  // A longer label wins over a shorter one it contains.
  LabelSet nested{"nested", {{"fault", FaultType::kOuterRace, 0}, {"roller fault", FaultType::kRoller, 0}}};
  CHECK(parse_label("a roller fault here", nested).first == "roller fault");
  CHECK(to_string(ParseStatus::kSubstring) == "substring");
}

TEST_CASE("greedy decode matches an independent argmax loop") {
  const auto params = noisy_model(1);
  const Diagnoser model(params, LabelSet::toy(), 12);
  const auto audio = model.encode(clip_of(1, 1.0, 2));
  CHECK(audio.rows() == 25);
  const auto prompt = textcodec::build_prompt(kDiagnosisQuestion, 25);
  const auto got = model.greedy_decode(prompt, audio, 12);
  const std::string text(got.tokens.begin(), got.tokens.end());
  CHECK(text == greedy_oracle(params, prompt, audio, 12));
  CHECK(got.truncated == (got.tokens.size() == 12));

  const auto d = model.diagnose(clip_of(1, 1.0, 2));
  CHECK(d.raw_text == textcodec::sanitize_utf8(text));
  CHECK(d.truncated == got.truncated);
  const auto [label, status] = parse_label(d.raw_text, model.labels());
  CHECK(d.parsed_label == label);
  CHECK(d.status == status);
}

TEST_CASE("ties resolve to the lowest token and max_len truncates") {
  auto params = init_params(ModelConfig{});
  params.lm_head.w0.fill(0.0f);
  const Diagnoser model(params, LabelSet::toy(), 5);
  const auto d = model.diagnose(clip_of(0, 0.5, 3));
  CHECK(d.raw_text == std::string(5, '\0'));
  CHECK(d.truncated);
  CHECK(d.status == ParseStatus::kUnparseable);
  CHECK(error_code_of([&] { Diagnoser(params, LabelSet::toy(), 0); }) == code(ErrorCode::kInvalidArgument));
}

TEST_CASE("decoding stops at a special token") {
  // Only EOS gets a non-zero logit: it wins whenever that logit is positive,
  // so the row sign is chosen from a probe pass.
  auto params = init_params(ModelConfig{});
  params.lm_head.w0.fill(0.0f);
  params.lm_head.w0(vocab::kEos, 0) = 1.0f;
  const auto audio = net::encode_audio(clip_of(2, 1.0, 4), params);
  const auto prompt = textcodec::build_prompt(kDiagnosisQuestion, 25);
  const auto probe = net::decoder_logits(params, prompt, audio, {static_cast<int>(prompt.size()) - 1});
  REQUIRE(probe(0, vocab::kEos) != 0.0f);
  if (probe(0, vocab::kEos) < 0.0f) params.lm_head.w0(vocab::kEos, 0) = -1.0f;
  const Diagnoser model(params, LabelSet::toy(), 4);
  const auto out = model.greedy_decode(prompt, audio, 4);
  CHECK(out.tokens.empty());
  CHECK_FALSE(out.truncated);
}

TEST_CASE("follow-up turns carry the history") {
  const auto params = noisy_model(5);
  const Diagnoser model(params, LabelSet::toy(), 8);
  DialogueSession s;
  CHECK(error_code_of([&] { model.follow_up(s, "where?"); }) == code(ErrorCode::kSessionNotFound));
  const auto d = model.diagnose(clip_of(3, 1.0, 6), s);
  CHECK(s.label == d.raw_text);
  const auto a1 = model.follow_up(s, "where is the fault located?");
  const auto a2 = model.follow_up(s, "how severe is it?");
  REQUIRE(s.history.size() == 2);
  CHECK(s.history[0].question == "where is the fault located?");
  CHECK(s.history[1].response == a2);

  const auto p1 = textcodec::build_followup_prompt(kDiagnosisQuestion, 25, d.raw_text, {},
                                                   "where is the fault located?");
  CHECK(a1 == textcodec::sanitize_utf8(greedy_oracle(params, p1, s.audio, 8)));
  const std::vector<textcodec::Turn> h1 = {{"where is the fault located?", a1}};
  const auto p2 = textcodec::build_followup_prompt(kDiagnosisQuestion, 25, d.raw_text, h1, "how severe is it?");
  CHECK(a2 == textcodec::sanitize_utf8(greedy_oracle(params, p2, s.audio, 8)));

  // A new diagnosis resets the dialogue.
  model.diagnose(clip_of(0, 1.0, 7), s);
  CHECK(s.history.empty());
}

TEST_CASE("long clips are diagnosed from their first second") {
  const Diagnoser model(noisy_model(8), LabelSet::toy(), 4);
  CHECK(model.encode(clip_of(2, 2.5, 9)).rows() == 25);
  const ModelConfig cfg;
  CHECK(model.encode(clip_of(2, 0.5, 9)).rows() ==
        static_cast<std::size_t>(net::audio_token_count(net::frame_count(8000, cfg), cfg)));
}
