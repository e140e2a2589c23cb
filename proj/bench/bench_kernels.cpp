// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/kernels.hpp"
#include "vibrodiag/optim.hpp"
#include "vibrodiag/rng.hpp"
#include "vibrodiag/synthbench.hpp"

using namespace vibrodiag;

namespace {

// Encoder-sized product: 98 frames x d_model against a 128 x 64 weight.
constexpr std::size_t kN = 98, kK = 64, kD = 128;

// 1 thread, plus every processor when there is more than one.
void thread_args(benchmark::internal::Benchmark* b) {
  b->Arg(1);
  if (omp_get_num_procs() > 1) b->Arg(omp_get_num_procs());
}

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void BM_MatmulNtReference(benchmark::State& state) {
  const auto x = random_vec(kN * kK, 1), w = random_vec(kD * kK, 2);
  std::vector<float> y(kN * kD);
  for (auto _ : state) {
    kernels::reference::matmul_nt(x.data(), w.data(), y.data(), kN, kK, kD);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(kN * kK * kD));
}
BENCHMARK(BM_MatmulNtReference);

// Arg: OpenMP threads; 1 takes the serial path.
void BM_MatmulNt(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  const auto x = random_vec(kN * kK, 1), w = random_vec(kD * kK, 2);
  std::vector<float> y(kN * kD);
  for (auto _ : state) {
    kernels::matmul_nt(x.data(), w.data(), y.data(), kN, kK, kD);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(kN * kK * kD));
}
BENCHMARK(BM_MatmulNt)->Apply(thread_args);

void BM_MatmulTnAccReference(benchmark::State& state) {
  const auto dy = random_vec(kN * kD, 3), x = random_vec(kN * kK, 4);
  std::vector<float> dw(kD * kK);
  for (auto _ : state) {
    kernels::reference::matmul_tn_acc(dy.data(), x.data(), dw.data(), kN, kD, kK);
    benchmark::DoNotOptimize(dw.data());
  }
}
BENCHMARK(BM_MatmulTnAccReference);

void BM_MatmulTnAcc(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  const auto dy = random_vec(kN * kD, 3), x = random_vec(kN * kK, 4);
  std::vector<float> dw(kD * kK);
  for (auto _ : state) {
    kernels::matmul_tn_acc(dy.data(), x.data(), dw.data(), kN, kD, kK);
    benchmark::DoNotOptimize(dw.data());
  }
}
BENCHMARK(BM_MatmulTnAcc)->Apply(thread_args);

// One accumulation group of label examples on 1 s clips.
void BM_BatchGradients(benchmark::State& state) {
  omp_set_num_threads(static_cast<int>(state.range(0)));
  auto params = init_params(ModelConfig{});
  perturb_adapters(params, 0.02, 5);
  std::vector<TrainExample> batch;
  for (int i = 0; i < 4; ++i) {
    const auto cond = synthbench::toy_classes()[static_cast<std::size_t>(i)];
    TrainExample ex;
    ex.mel = net::mel_frontend(sigproc::prepare_clip(synthbench::synth_signal(cond, 1.0, 16000, 10 + i)), params.cfg);
    const int n_audio = net::audio_token_count(static_cast<int>(ex.mel.rows()), params.cfg);
    const auto prompt = textcodec::build_prompt(kDiagnosisQuestion, n_audio);
    ex.sequences.push_back({textcodec::build_prompt(kDiagnosisQuestion, n_audio, "roller fault"),
                            static_cast<int>(prompt.size())});
    batch.push_back(std::move(ex));
  }
  for (auto _ : state) benchmark::DoNotOptimize(optim::batch_gradients(params, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.size()));
}
BENCHMARK(BM_BatchGradients)->Apply(thread_args)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
