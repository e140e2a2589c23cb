// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vibrodiag/backprop.hpp"
#include "vibrodiag/rng.hpp"
#include "vibrodiag/synthbench.hpp"

using namespace vibrodiag;
using namespace vibrodiag::testing;

namespace {

MelSpec clip_mel(const ModelConfig& cfg, FaultType type, int sev, double seconds, std::uint64_t seed) {
  const auto clip =
      sigproc::prepare_clip(synthbench::synth_signal({type, sev, 6000.0, 900.0}, seconds, 16000, seed));
  return net::mel_frontend(clip, cfg);
}

TokenSeq labelled(int n_audio, std::string_view label) {
  return textcodec::build_prompt("what is the fault?", n_audio, label);
}

int prompt_len(int n_audio) { return static_cast<int>(textcodec::build_prompt("what is the fault?", n_audio).size()); }

// -sum log softmax(logits)[target] from the public forward pass.
double naive_loss(const ModelParams& params, const MelSpec& mel, const TokenSeq& tokens, int target_begin) {
  const auto audio = net::encode_mel(mel, params);
  std::vector<int> pos;
  for (int t = target_begin - 1; t + 1 < static_cast<int>(tokens.size()); ++t) pos.push_back(t);
  const auto logits = net::decoder_logits(params, tokens, audio, pos);
  double loss = 0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const auto row = logits.row(i);
    double mx = -1e300;
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0;
    for (float v : row) z += std::exp(v - mx);
    loss -= row[static_cast<std::size_t>(tokens[static_cast<std::size_t>(pos[i]) + 1])] - mx - std::log(z);
  }
  return loss;
}

double loss_double(const ModelParams& params, const backprop::Example& ex) {
  return backprop::example_loss<double>(params, merge_adapters<double>(params), ex, nullptr);
}

}  // namespace

TEST_CASE("example loss equals the naive negative log-likelihood") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.03, 1);
  const auto mel = clip_mel(params.cfg, FaultType::kOuterRace, 250, 0.4, 2);
  const int n_audio = net::audio_token_count(static_cast<int>(mel.rows()), params.cfg);
  const auto seq = labelled(n_audio, "outer race fault");
  backprop::Example ex;
  ex.mel = &mel;
  ex.add_sequence(seq, prompt_len(n_audio));
  CHECK(backprop::target_count(ex) == 17);
  const double want = naive_loss(params, mel, seq, prompt_len(n_audio));
  const double got_f = backprop::example_loss<float>(params, merge_adapters<float>(params), ex, nullptr);
  const double got_d = loss_double(params, ex);
  CHECK(rel_err(got_f, want) < 1e-5);
  CHECK(rel_err(got_d, want) < 1e-5);
}

TEST_CASE("sequences sharing a prefix fold into one pass without changing the loss") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.03, 3);
  const auto mel = clip_mel(params.cfg, FaultType::kRoller, 450, 0.3, 4);
  const int n_audio = net::audio_token_count(static_cast<int>(mel.rows()), params.cfg);
  const auto label = labelled(n_audio, "roller fault");
  const auto prompt = textcodec::build_followup_prompt("what is the fault?", n_audio, "roller fault", {},
                                                       "where is the fault located?");
  const auto follow = textcodec::build_followup_prompt("what is the fault?", n_audio, "roller fault", {},
                                                       "where is the fault located?", std::string_view("rolling element"));
  backprop::Example both;
  both.mel = &mel;
  both.add_sequence(label, prompt_len(n_audio));
  both.add_sequence(follow, static_cast<int>(prompt.size()));
  CHECK(both.passes.size() == 1);
  CHECK(both.sequences == 2);

  backprop::Example a, b;
  a.mel = b.mel = &mel;
  a.add_sequence(label, prompt_len(n_audio));
  b.add_sequence(follow, static_cast<int>(prompt.size()));
  CHECK(rel_err(loss_double(params, both), loss_double(params, a) + loss_double(params, b)) < 1e-12);

  // Folding works in either order.
  backprop::Example rev;
  rev.mel = &mel;
  rev.add_sequence(follow, static_cast<int>(prompt.size()));
  rev.add_sequence(label, prompt_len(n_audio));
  CHECK(rev.passes.size() == 1);
  CHECK(rel_err(loss_double(params, rev), loss_double(params, both)) < 1e-12);

  // A different label cannot share the pass.
  backprop::Example other = a;
  other.add_sequence(labelled(n_audio, "inner race fault"), prompt_len(n_audio));
  CHECK(other.passes.size() == 2);

  backprop::Example bad;
  CHECK(error_code_of([&] { bad.add_sequence(label, static_cast<int>(label.size())); }) == code(ErrorCode::kEmptyBatch));
  CHECK(error_code_of([&] { bad.add_sequence(label, 0); }) == code(ErrorCode::kEmptyBatch));
}

TEST_CASE("adapter projection of a dense gradient matches finite differences of lora_linear") {
  const auto params = [] {
    auto p = init_params(ModelConfig{});
    perturb_adapters(p, 0.2, 5);
    return p;
  }();
  const LoraLinear& L = params.decoder[1].cq;  // 16 x 64
  const std::size_t d = L.out_dim(), k = L.in_dim();
  const auto r = static_cast<std::size_t>(L.adapter.rank);
  Rng rng(6);
  std::vector<double> x(k), c(d);
  for (auto& v : x) v = rng.normal();
  for (auto& v : c) v = rng.normal();

  // loss = c . h(x), so dL/dW = c x^T.
  auto dense = backprop::Gradients<double>::zeros_like(params);
  auto& G = dense.layers[static_cast<std::size_t>(L.id)];
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) G(i, j) = c[i] * x[j];
  const auto grads = backprop::to_adapter_gradients(params, dense);
  const auto& g = grads.layers[static_cast<std::size_t>(L.id)];

  const Matrix<double> w0 = L.w0.cast<double>();
  const auto loss = [&](const Matrix<double>& A, const Matrix<double>& B) {
    const auto h = net::lora_linear(x, w0, A, B, L.adapter.alpha);
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += c[i] * h[i];
    return s;
  };
  const Matrix<double> A = L.adapter.A.cast<double>(), B = L.adapter.B.cast<double>();
  const double eps = 1e-6;
  double worst = 0;
  for (std::size_t idx = 0; idx < r * k; idx += 37) {
    auto ap = A, am = A;
    ap.values()[idx] += eps;
    am.values()[idx] -= eps;
    const double fd = (loss(ap, B) - loss(am, B)) / (2 * eps);
    worst = std::max(worst, std::abs(fd - g.dA.values()[idx]) / std::max(1e-3, std::abs(fd)));
  }
  for (std::size_t idx = 0; idx < d * r; idx += 11) {
    auto bp = B, bm = B;
    bp.values()[idx] += eps;
    bm.values()[idx] -= eps;
    const double fd = (loss(A, bp) - loss(A, bm)) / (2 * eps);
    worst = std::max(worst, std::abs(fd - g.dB.values()[idx]) / std::max(1e-3, std::abs(fd)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("full-model adapter gradients match central differences") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.02, 7);
  const auto mel = clip_mel(params.cfg, FaultType::kInnerRace, 150, 0.3, 8);
  const int n_audio = net::audio_token_count(static_cast<int>(mel.rows()), params.cfg);
  backprop::Example ex;
  ex.mel = &mel;
  ex.add_sequence(labelled(n_audio, "inner race fault"), prompt_len(n_audio));

  auto dense = backprop::Gradients<double>::zeros_like(params);
  backprop::example_loss<double>(params, merge_adapters<double>(params), ex, &dense);
  const auto grads = backprop::to_adapter_gradients(params, dense);

  // A handful of coordinates in every adapter; parameters are f32, so the
  // step actually taken is measured after rounding.
  Rng rng(9);
  double worst = 0;
  int checked = 0;
  for (auto* L : params.linears()) {
    for (int which = 0; which < 2; ++which) {
      Matrix<float>& P = which == 0 ? L->adapter.A : L->adapter.B;
      const auto& g = which == 0 ? grads.layers[static_cast<std::size_t>(L->id)].dA
                                 : grads.layers[static_cast<std::size_t>(L->id)].dB;
      const std::size_t idx = rng.below(P.size());
      const float orig = P.values()[idx];
      const float up = orig + 1e-3f, down = orig - 1e-3f;
      P.values()[idx] = up;
      const double lp = loss_double(params, ex);
      P.values()[idx] = down;
      const double lm = loss_double(params, ex);
      P.values()[idx] = orig;
      const double fd = (lp - lm) / (static_cast<double>(up) - down);
      const double an = g.values()[idx];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
      ++checked;
    }
  }
  CHECK(checked == 68);
  CHECK(worst < 1e-3);
}

TEST_CASE("float and double gradients agree") {
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.02, 10);
  const auto mel = clip_mel(params.cfg, FaultType::kHealthy, 0, 0.3, 11);
  const int n_audio = net::audio_token_count(static_cast<int>(mel.rows()), params.cfg);
  backprop::Example ex;
  ex.mel = &mel;
  ex.add_sequence(labelled(n_audio, "healthy"), prompt_len(n_audio));
  auto gf = backprop::Gradients<float>::zeros_like(params);
  auto gd = backprop::Gradients<double>::zeros_like(params);
  backprop::example_loss<float>(params, merge_adapters<float>(params), ex, &gf);
  backprop::example_loss<double>(params, merge_adapters<double>(params), ex, &gd);
  double num = 0, den = 0;
  for (std::size_t l = 0; l < gd.layers.size(); ++l) {
    for (std::size_t i = 0; i < gd.layers[l].size(); ++i) {
      const double a = gf.layers[l].values()[i], b = gd.layers[l].values()[i];
      num += (a - b) * (a - b);
      den += b * b;
    }
  }
  CHECK(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("gradient buffers") {
  const auto params = init_params(ModelConfig{});
  auto a = backprop::Gradients<float>::zeros_like(params);
  CHECK(a.size() == static_cast<std::size_t>(net::trainable_param_count(params.cfg).frozen -
                                             static_cast<std::int64_t>(params.token_embedding.size())));
  auto b = a;
  a.layers[0].values()[3] = 1.5f;
  b.layers[0].values()[3] = 2.0f;
  a.add(b);
  CHECK(a.layers[0].values()[3] == 3.5f);
  a.clear();
  CHECK(a.layers[0].values()[3] == 0.0f);
  const auto adapters = backprop::to_adapter_gradients(params, a);
  CHECK(static_cast<std::int64_t>(adapters.size()) == net::trainable_param_count(params.cfg).trainable);
}
