// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "vibrodiag/condition.hpp"

namespace vibrodiag {

/// Real-valued vibration waveform.
struct Signal {
  std::vector<double> samples;
  int sample_rate_hz = 0;
  std::optional<FaultCondition> meta;

  /// Throws kInvalidArgument unless every sample is finite, the rate is
  /// positive and the signal is non-empty.
  void validate() const;
};

/// Mono PCM16 clip, symmetric range [-32767, 32767].
struct WavClip {
  std::vector<std::int16_t> pcm;
  int sample_rate_hz = 0;

  bool operator==(const WavClip&) const = default;
};

inline constexpr int kModelSampleRate = 16000;
inline constexpr double kPcmScale = 32767.0;
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

namespace sigproc {

/// Polyphase windowed-sinc resampler (Kaiser window, 64 taps per phase).
Signal resample(const Signal& sig, int target_hz);

/// beta * (x - mean) / std + alpha with population std.
Signal normalize_stat(const Signal& sig, double alpha, double beta);

/// x / max|x|.
Signal normalize_peak(const Signal& sig);

/// x -> round(clamp(x, -1, 1) * 32767).
WavClip quantize_pcm16(const Signal& sig);
Signal dequantize_pcm16(const WavClip& clip);

void write_wav(const WavClip& clip, const std::filesystem::path& path);
WavClip read_wav(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const WavClip& clip);
WavClip decode_wav(const std::vector<std::uint8_t>& bytes);

/// Adds zero-mean white Gaussian noise at the requested SNR. kNoNoise returns
/// the input unchanged.
Signal add_noise_snr(const Signal& sig, double snr_db, std::uint64_t seed);

std::vector<Signal> segment(const Signal& sig, std::size_t length, std::size_t hop);

double mean_power(const std::vector<double>& x);

enum class NormMode { kPeak, kStat };

struct PipelineOptions {
  NormMode norm = NormMode::kPeak;
  double stat_alpha = 0.0;
  double stat_beta = 0.25;
  int target_hz = kModelSampleRate;
};

/// Raw segment -> model-ready clip: resample, normalize, clamp, quantize.
/// An all-zero segment passes through as silence.
WavClip prepare_clip(const Signal& raw, const PipelineOptions& opts = {});

}  // namespace sigproc
}  // namespace vibrodiag
