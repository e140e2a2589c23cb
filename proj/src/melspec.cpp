// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "vibrodiag/error.hpp"
#include "vibrodiag/net.hpp"

namespace vibrodiag::net {
namespace {

constexpr double kLogFloor = 1e-6;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// FFTW planning is not thread-safe; plans are built once per size under a
// lock and then executed through the new-array interface, which is.
fftw_plan r2c_plan(int n) {
  static std::mutex mu;
  static std::map<int, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  double* in = fftw_alloc_real(static_cast<std::size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  fftw_plan plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  plans.emplace(n, plan);
  return plan;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

Matrix<double> mel_filterbank(const ModelConfig& cfg) {
  const int n_bins = cfg.n_fft / 2 + 1;
  const double nyquist = cfg.sample_rate_hz / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bins) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(edges.size() - 1));
  }
  Matrix<double> fb(static_cast<std::size_t>(cfg.mel_bins), static_cast<std::size_t>(n_bins));
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate_hz / cfg.n_fft;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(static_cast<std::size_t>(m), static_cast<std::size_t>(b)) = w;
    }
  }
  return fb;
}

MelSpec mel_frontend(const WavClip& clip, const ModelConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate_hz != cfg.sample_rate_hz) {
    fail(ErrorCode::kInvalidArgument, "mel front end expects " +
                                          std::to_string(cfg.sample_rate_hz) + " Hz input");
  }
  const int n = static_cast<int>(clip.pcm.size());
  const int win = cfg.win_samples();
  const int hop = cfg.hop_samples();
  const int frames = frame_count(n, cfg);
  if (frames < 1) {
    fail(ErrorCode::kTooShort, "clip has " + std::to_string(n) + " samples, window is " +
                                   std::to_string(win));
  }
  const Matrix<double> fb = mel_filterbank(cfg);

  std::vector<double> window(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) {
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  }

  const int n_bins = cfg.n_fft / 2 + 1;
  fftw_plan plan = r2c_plan(cfg.n_fft);
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(static_cast<std::size_t>(cfg.n_fft)));
  std::unique_ptr<fftw_complex, FftwDeleter> out(
      fftw_alloc_complex(static_cast<std::size_t>(n_bins)));
  std::vector<double> power(static_cast<std::size_t>(n_bins));

  MelSpec mel(static_cast<std::size_t>(frames), static_cast<std::size_t>(cfg.mel_bins));
  for (int f = 0; f < frames; ++f) {
    const int start = f * hop;
    for (int i = 0; i < cfg.n_fft; ++i) {
      in.get()[i] = i < win ? window[static_cast<std::size_t>(i)] *
                                  (clip.pcm[static_cast<std::size_t>(start + i)] / kPcmScale)
                            : 0.0;
    }
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    for (int b = 0; b < n_bins; ++b) {
      const double re = out.get()[b][0];
      const double im = out.get()[b][1];
      power[static_cast<std::size_t>(b)] = re * re + im * im;
    }
    for (int m = 0; m < cfg.mel_bins; ++m) {
      const double* w = fb.data() + static_cast<std::size_t>(m) * static_cast<std::size_t>(n_bins);
      double e = 0.0;
      for (int b = 0; b < n_bins; ++b) e += w[b] * power[static_cast<std::size_t>(b)];
      mel(static_cast<std::size_t>(f), static_cast<std::size_t>(m)) =
          static_cast<float>(std::log(e + kLogFloor));
    }
  }
  return mel;
}

}  // namespace vibrodiag::net
