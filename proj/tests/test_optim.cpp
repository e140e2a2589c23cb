// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "reference_model.hpp"
#include "test_util.hpp"
#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/optim.hpp"
#include "vibrodiag/synthbench.hpp"

using namespace vibrodiag;
using namespace vibrodiag::testing;

namespace {

const char* const kLabels[] = {"healthy", "inner race fault", "outer race fault", "roller fault"};

TrainExample make_example(const ModelConfig& cfg, int cls, double seconds, std::uint64_t seed,
                          bool followup = false) {
  const auto cond = synthbench::toy_classes()[static_cast<std::size_t>(cls)];
  const auto clip = sigproc::prepare_clip(synthbench::synth_signal(cond, seconds, 16000, seed));
  TrainExample ex;
  ex.mel = net::mel_frontend(clip, cfg);
  const int n_audio = net::audio_token_count(static_cast<int>(ex.mel.rows()), cfg);
  const auto prompt = textcodec::build_prompt(kDiagnosisQuestion, n_audio);
  ex.sequences.push_back({textcodec::build_prompt(kDiagnosisQuestion, n_audio, kLabels[cls]),
                          static_cast<int>(prompt.size())});
  if (followup) {
    const auto q = textcodec::build_followup_prompt(kDiagnosisQuestion, n_audio, kLabels[cls], {}, "how bad?");
    ex.sequences.push_back(
        {textcodec::build_followup_prompt(kDiagnosisQuestion, n_audio, kLabels[cls], {}, "how bad?",
                                          std::string_view("moderate")),
         static_cast<int>(q.size())});
  }
  return ex;
}

std::vector<TrainExample> make_batch(const ModelConfig& cfg, int n, double seconds, std::uint64_t seed) {
  std::vector<TrainExample> out;
  for (int i = 0; i < n; ++i) out.push_back(make_example(cfg, i % 4, seconds, seed + static_cast<std::uint64_t>(i)));
  return out;
}

std::vector<float> flatten(const backprop::AdapterGradients<float>& g) {
  std::vector<float> out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.dA.values().begin(), l.dA.values().end());
    out.insert(out.end(), l.dB.values().begin(), l.dB.values().end());
  }
  return out;
}

std::vector<float> adapter_values(const ModelParams& p) {
  std::vector<float> out;
  for (const auto* l : p.linears()) {
    out.insert(out.end(), l->adapter.A.values().begin(), l->adapter.A.values().end());
    out.insert(out.end(), l->adapter.B.values().begin(), l->adapter.B.values().end());
  }
  return out;
}

class Threads {
 public:
  explicit Threads(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~Threads() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

}  // namespace

TEST_CASE("ce_loss equals a naive double-precision negative log-likelihood") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.05, 2);
  std::vector<TrainExample> batch = {make_example(params.cfg, 1, 0.3, 3, true), make_example(params.cfg, 3, 0.25, 4)};
  double want = 0;
  int sequences = 0;
  for (const auto& ex : batch) {
    const auto z = ref::encode(ex.mel, params);
    for (const auto& s : ex.sequences) {
      want += ref::sequence_nll(params, z, s.tokens, s.target_begin);
      ++sequences;
    }
  }
  want /= sequences;
  const double got = optim::ce_loss(params, batch);
  CHECK(rel_err(got, want) < 1e-9);
  CHECK(error_code_of([&] { optim::ce_loss(params, std::vector<TrainExample>{}); }) == code(ErrorCode::kEmptyBatch));
}

TEST_CASE("a uniform predictor scores ln(262) per token") {
  auto params = init_params(ModelConfig{});
  params.lm_head.w0.fill(0.0f);
  auto ex = make_example(params.cfg, 2, 0.2, 5);
  // One target token.
  auto& s = ex.sequences[0];
  s.tokens.resize(static_cast<std::size_t>(s.target_begin) + 1);
  const double loss = optim::ce_loss(params, std::vector<TrainExample>{ex});
  CHECK(std::abs(loss - std::log(262.0)) < 1e-9);
}

TEST_CASE("dpo_loss") {
  CHECK(std::abs(optim::dpo_loss(-3.0, -3.0, -3.0, -3.0, 0.1) - std::log(2.0)) < 1e-12);
  CHECK(std::abs(optim::dpo_loss(-1.0, -5.0, -2.0, -6.0, 0.5) - std::log(2.0)) < 1e-12);
  const double z = 0.1 * ((-1.0 - -2.0) - (-4.0 - -3.0));
  CHECK(optim::dpo_loss(-1.0, -4.0, -2.0, -3.0, 0.1) == doctest::Approx(std::log1p(std::exp(-z))).epsilon(1e-14));
  // Large margins stay finite.
  CHECK(optim::dpo_loss(0, -1e4, 0, 0, 1.0) == doctest::Approx(0.0));
  CHECK(optim::dpo_loss(-1e4, 0, 0, 0, 1.0) == doctest::Approx(1e4));
}

TEST_CASE("gradient accumulation is linear in the examples") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.03, 6);
  const auto batch = make_batch(params.cfg, 8, 0.2, 10);
  const auto whole = flatten(optim::batch_gradients(params, batch));
  const std::span<const TrainExample> all(batch);
  const auto lo = flatten(optim::batch_gradients(params, all.subspan(0, 3)));
  const auto hi = flatten(optim::batch_gradients(params, all.subspan(3)));
  double num = 0, den = 0;
  for (std::size_t i = 0; i < whole.size(); ++i) {
    const double avg = (3.0 * lo[i] + 5.0 * hi[i]) / 8.0;
    num = std::max(num, std::abs(avg - whole[i]));
    den = std::max(den, std::abs(static_cast<double>(whole[i])));
  }
  CHECK(num / den < 1e-6);
}

TEST_CASE("micro-batching leaves training bitwise unchanged") {
  const auto data = make_batch(ModelConfig{}, 8, 0.15, 20);
  TrainConfig a;
  a.batch = 8;
  a.grad_accum = 1;
  a.updates = 3;
  a.warmup_frac = 0.0;
  TrainConfig b = a;
  b.batch = 4;
  b.grad_accum = 2;
  auto pa = init_params(ModelConfig{});
  auto pb = pa;
  const auto ra = optim::train_stage(pa, data, a);
  const auto rb = optim::train_stage(pb, data, b);
  REQUIRE(ra.curve.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ra.curve[i].loss == rb.curve[i].loss);
  CHECK(adapter_values(pa) == adapter_values(pb));
}

TEST_CASE("training does not depend on the thread count and lowers the loss") {
  const auto data = make_batch(ModelConfig{}, 12, 0.15, 30);
  TrainConfig cfg;
  cfg.batch = 6;
  cfg.grad_accum = 1;
  cfg.updates = 8;
  cfg.lr = 3e-3;
  const auto run = [&](int threads) {
    Threads t(threads);
    auto p = init_params(ModelConfig{});
    auto r = optim::train_stage(p, data, cfg);
    return std::pair{r, adapter_values(p)};
  };
  const auto [r1, p1] = run(1);
  const auto [r4, p4] = run(4);
  REQUIRE(r1.curve.size() == 8);
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].loss == r4.curve[i].loss);
    CHECK(r1.curve[i].lr == r4.curve[i].lr);
  }
  CHECK(p1 == p4);
  CHECK(r1.curve.back().loss < r1.curve.front().loss);
}

TEST_CASE("learning-rate warmup") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_frac = 0.05;
  CHECK(optim::lr_at(0, 100, cfg) == 0.0);
  CHECK(optim::lr_at(2, 100, cfg) == doctest::Approx(0.4e-3));
  CHECK(optim::lr_at(5, 100, cfg) == 1e-3);
  CHECK(optim::lr_at(99, 100, cfg) == 1e-3);
  // Fewer than 20 updates: no warmup step fits.
  CHECK(optim::lr_at(0, 19, cfg) == 1e-3);
  cfg.warmup_frac = 0.0;
  CHECK(optim::lr_at(0, 100, cfg) == 1e-3);
}

TEST_CASE("update counts") {
  TrainConfig cfg;
  cfg.epochs = 40;
  CHECK(cfg.examples_per_update() == 512);
  CHECK(cfg.total_updates(800) == 62);
  cfg.updates = 7;
  CHECK(cfg.total_updates(800) == 7);
  cfg.updates = 0;
  cfg.epochs = 1;
  CHECK(cfg.total_updates(10) == 1);
}

TEST_CASE("first Adam step moves each coordinate by lr against the gradient sign") {
  auto params = init_params(ModelConfig{});
  const auto before = adapter_values(params);
  auto dense = backprop::Gradients<float>::zeros_like(params);
  auto grads = backprop::to_adapter_gradients(params, dense);
  auto& g = grads.layers[0];
  g.dA.values()[0] = 0.5f;
  g.dA.values()[1] = -2.0f;
  g.dB.values()[0] = 1e-3f;
  optim::Adam adam(params, 0.9, 0.999, 1e-8);
  adam.step(params, grads, 0.01);
  CHECK(adam.steps() == 1);
  const auto& L = params.in_proj;
  CHECK(L.adapter.A.values()[0] == doctest::Approx(before[0] - 0.01).epsilon(1e-6));
  CHECK(L.adapter.A.values()[1] == doctest::Approx(before[1] + 0.01).epsilon(1e-6));
  CHECK(L.adapter.B.values()[0] == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(L.adapter.A.values()[2] == before[2]);

  grads.layers[0].dA.resize(1, 1);
  CHECK(error_code_of([&] { adam.step(params, grads, 0.01); }) == code(ErrorCode::kShapeMismatch));
}

TEST_CASE("train config serialization and validation") {
  TrainConfig c;
  c.lr = 2e-4;
  c.stage = Stage::kVsa;
  c.seed = 99;
  c.updates = 5;
  CHECK(TrainConfig::from_json(c.to_json()) == c);
  CHECK(to_string(Stage::kGfc) == "gfc");
  CHECK(stage_from_string("vsa") == Stage::kVsa);
  CHECK(error_code_of([] { stage_from_string("sft"); }) == code(ErrorCode::kInvalidArgument));
  TrainConfig bad;
  bad.batch = 0;
  CHECK(error_code_of([&] { bad.validate(); }) == code(ErrorCode::kInvalidArgument));
  bad = TrainConfig{};
  bad.warmup_frac = 1.0;
  CHECK(error_code_of([&] { bad.validate(); }) == code(ErrorCode::kInvalidArgument));
  CHECK(error_code_of([] { TrainConfig::from_json({{"lr", -1.0}}); }) == code(ErrorCode::kInvalidArgument));
}

TEST_CASE("training rejects empty data") {
  auto params = init_params(ModelConfig{});
  CHECK(error_code_of([&] { optim::train_stage(params, std::vector<TrainExample>{}, TrainConfig{}); }) ==
        code(ErrorCode::kEmptyBatch));
  std::vector<TrainExample> hollow(1);
  CHECK(error_code_of([&] { optim::train_stage(params, hollow, TrainConfig{}); }) == code(ErrorCode::kEmptyBatch));
}

TEST_CASE("grad_check on the full model") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.02, 40);
  const auto batch = make_batch(params.cfg, 2, 0.2, 41);
  const auto r = optim::grad_check(params, batch, 1, 42);
  CHECK(r.coordinates == 68);
  CHECK(r.max_rel_error < 1e-3);
  CHECK_FALSE(r.worst.empty());
  CHECK(error_code_of([&] { optim::grad_check(params, batch, 0, 1); }) == code(ErrorCode::kInvalidArgument));
}

TEST_CASE("checkpoint round trip") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.1, 50);
  const nlohmann::json meta = {{"label_set", "toy"}, {"note", "x"}};
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(params, meta, dir / "m.ckpt");
  const auto ck = load_checkpoint(dir / "m.ckpt");
  CHECK(ck.meta == meta);
  CHECK(ck.params.cfg == params.cfg);
  CHECK(adapter_values(ck.params) == adapter_values(params));
  CHECK(ck.params.token_embedding == params.token_embedding);
  for (std::size_t i = 0; i < params.linears().size(); ++i) {
    CHECK(ck.params.linears()[i]->w0 == params.linears()[i]->w0);
  }
  CHECK(encode_checkpoint(ck.params, ck.meta) == encode_checkpoint(params, meta));
}

TEST_CASE("checkpoint decoding errors") {
  const auto params = init_params(ModelConfig{});
  const auto bytes = encode_checkpoint(params, {});
  CHECK(error_code_of([] { decode_checkpoint({'V', 'B'}); }) == code(ErrorCode::kTruncatedFile));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(error_code_of([&] { decode_checkpoint(bad); }) == code(ErrorCode::kBadMagic));
  auto cut = bytes;
  cut.resize(cut.size() - 100);
  CHECK(error_code_of([&] { decode_checkpoint(cut); }) == code(ErrorCode::kTruncatedFile));

  std::string text(bytes.begin(), bytes.end());
  const auto at = text.find("\"format_version\":1");
  REQUIRE(at != std::string::npos);
  text[at + 17] = '9';
  CHECK(error_code_of([&] { decode_checkpoint(std::vector<std::uint8_t>(text.begin(), text.end())); }) ==
        code(ErrorCode::kVersionMismatch));
  CHECK(error_code_of([] { load_checkpoint("/nonexistent/m.ckpt"); }) == code(ErrorCode::kIoFailure));
}

TEST_CASE("loss curve csv") {
  const auto dir = scratch_dir("loss_csv");
  optim::write_loss_csv({{0, 0.0, 2.5}, {1, 1e-3, 0.125}}, dir / "l.csv");
  std::ifstream in(dir / "l.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "step,lr,loss\n0,0,2.5\n1,0.001,0.125\n");
}
