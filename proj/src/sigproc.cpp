// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/sigproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "vibrodiag/error.hpp"
#include "vibrodiag/rng.hpp"

namespace vibrodiag {

void Signal::validate() const {
  if (sample_rate_hz <= 0) fail(ErrorCode::kNonPositiveRate, "sample rate must be positive");
  if (samples.empty()) fail(ErrorCode::kInvalidArgument, "signal is empty");
  for (double x : samples) {
    if (!std::isfinite(x)) fail(ErrorCode::kInvalidArgument, "signal has a non-finite sample");
  }
}

namespace sigproc {
namespace {

constexpr int kHalfTaps = 32;  // 64 taps per phase
constexpr double kKaiserBeta = 8.0;
constexpr double kRolloff = 0.94;
constexpr std::int64_t kMaxTablePhases = 4096;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

double kaiser(double t) {
  const double r = t / kHalfTaps;
  if (r <= -1.0 || r >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) /
         std::cyl_bessel_i(0.0, kKaiserBeta);
}

// Taps for one fractional phase; tap j multiplies input index i0 - kHalfTaps + 1 + j.
void phase_taps(double frac, double cutoff, double* taps) {
  double sum = 0.0;
  for (int j = 0; j < 2 * kHalfTaps; ++j) {
    const double t = static_cast<double>(j - kHalfTaps + 1) - frac;
    taps[j] = cutoff * sinc(cutoff * t) * kaiser(t);
    sum += taps[j];
  }
  for (int j = 0; j < 2 * kHalfTaps; ++j) taps[j] /= sum;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

bool all_zero(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; });
}

}  // namespace

double mean_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

Signal resample(const Signal& sig, int target_hz) {
  if (target_hz <= 0) fail(ErrorCode::kNonPositiveRate, "target rate must be positive");
  sig.validate();
  if (target_hz == sig.sample_rate_hz) return sig;

  const std::int64_t g = std::gcd<std::int64_t>(sig.sample_rate_hz, target_hz);
  const std::int64_t up = target_hz / g;
  const std::int64_t down = sig.sample_rate_hz / g;
  const auto n_in = static_cast<std::int64_t>(sig.samples.size());
  const auto n_out = static_cast<std::int64_t>(
      std::llround(static_cast<double>(n_in) * target_hz / sig.sample_rate_hz));
  const double cutoff = kRolloff * std::min(1.0, static_cast<double>(up) / down);

  std::vector<double> table;
  const bool tabulate = up <= kMaxTablePhases;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(up) * 2 * kHalfTaps);
    for (std::int64_t p = 0; p < up; ++p) {
      phase_taps(static_cast<double>(p) / up, cutoff, table.data() + p * 2 * kHalfTaps);
    }
  }

  Signal out;
  out.sample_rate_hz = target_hz;
  out.meta = sig.meta;
  out.samples.resize(static_cast<std::size_t>(std::max<std::int64_t>(n_out, 0)));
  std::vector<double> scratch(2 * kHalfTaps);
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t i0 = pos / up;
    const std::int64_t phase = pos % up;
    const double* taps = nullptr;
    if (tabulate) {
      taps = table.data() + phase * 2 * kHalfTaps;
    } else {
      phase_taps(static_cast<double>(phase) / up, cutoff, scratch.data());
      taps = scratch.data();
    }
    double acc = 0.0;
    for (int j = 0; j < 2 * kHalfTaps; ++j) {
      const std::int64_t idx = i0 - kHalfTaps + 1 + j;
      if (idx >= 0 && idx < n_in) acc += taps[j] * sig.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

Signal normalize_stat(const Signal& sig, double alpha, double beta) {
  sig.validate();
  const auto& x = sig.samples;
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
    fail(ErrorCode::kDegenerateSignal, "constant signal has zero standard deviation");
  }
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0)) fail(ErrorCode::kDegenerateSignal, "zero standard deviation");

  Signal out = sig;
  for (double& v : out.samples) v = beta * ((v - mean) / sd) + alpha;
  return out;
}

Signal normalize_peak(const Signal& sig) {
  sig.validate();
  double peak = 0.0;
  for (double v : sig.samples) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) fail(ErrorCode::kDegenerateSignal, "all-zero signal has no peak");
  Signal out = sig;
  for (double& v : out.samples) {
    // Division keeps the peak sample at exactly +-1.
    v = v / peak;
  }
  return out;
}

WavClip quantize_pcm16(const Signal& sig) {
  WavClip clip;
  clip.sample_rate_hz = sig.sample_rate_hz;
  clip.pcm.reserve(sig.samples.size());
  for (double v : sig.samples) {
    const double c = std::clamp(v, -1.0, 1.0);
    clip.pcm.push_back(static_cast<std::int16_t>(std::lround(c * kPcmScale)));
  }
  return clip;
}

Signal dequantize_pcm16(const WavClip& clip) {
  Signal sig;
  sig.sample_rate_hz = clip.sample_rate_hz;
  sig.samples.reserve(clip.pcm.size());
  for (std::int16_t p : clip.pcm) sig.samples.push_back(static_cast<double>(p) / kPcmScale);
  return sig;
}

std::vector<std::uint8_t> encode_wav(const WavClip& clip) {
  if (clip.sample_rate_hz <= 0) fail(ErrorCode::kNonPositiveRate, "clip rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(clip.pcm.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  for (char c : std::string_view("RIFF")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, 36 + data_bytes);
  for (char c : std::string_view("WAVEfmt ")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  for (char c : std::string_view("data")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, data_bytes);
  for (std::int16_t s : clip.pcm) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

WavClip decode_wav(const std::vector<std::uint8_t>& bytes) {
  const auto malformed = [](const std::string& why) { fail(ErrorCode::kMalformedWav, why); };
  if (bytes.size() < 12) malformed("file shorter than a RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) malformed("missing RIFF magic");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) malformed("missing WAVE form type");

  bool have_fmt = false;
  WavClip clip;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = get_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) malformed("short fmt chunk");
      const std::uint8_t* f = bytes.data() + body;
      if (get_u16(f) != 1) malformed("audio format is not integer PCM");
      if (get_u16(f + 2) != 1) malformed("only mono files are supported");
      if (get_u16(f + 14) != 16) malformed("bits per sample must be 16");
      clip.sample_rate_hz = static_cast<int>(get_u32(f + 4));
      if (clip.sample_rate_hz <= 0) malformed("non-positive sample rate");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) malformed("data chunk precedes fmt chunk");
      if (body + size > bytes.size()) malformed("data chunk runs past end of file");
      if (size % 2 != 0) malformed("odd data chunk size for 16-bit samples");
      clip.pcm.resize(size / 2);
      for (std::size_t i = 0; i < clip.pcm.size(); ++i) {
        auto s = static_cast<std::int16_t>(get_u16(bytes.data() + body + 2 * i));
        // Symmetric range: the one asymmetric code point folds onto -32767.
        clip.pcm[i] = s == INT16_MIN ? static_cast<std::int16_t>(-32767) : s;
      }
      return clip;
    }
    pos = body + size + (size & 1);
  }
  fail(ErrorCode::kMalformedWav, have_fmt ? "no data chunk" : "no fmt chunk");
}

void write_wav(const WavClip& clip, const std::filesystem::path& path) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

WavClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

Signal add_noise_snr(const Signal& sig, double snr_db, std::uint64_t seed) {
  sig.validate();
  if (std::isinf(snr_db) && snr_db > 0) return sig;
  const double p_signal = mean_power(sig.samples);
  if (p_signal == 0.0) fail(ErrorCode::kDegenerateSignal, "zero-power signal has no defined SNR");
  const double sigma = std::sqrt(p_signal / std::pow(10.0, snr_db / 10.0));
  Rng rng(seed);
  Signal out = sig;
  for (double& v : out.samples) v += sigma * rng.normal();
  return out;
}

std::vector<Signal> segment(const Signal& sig, std::size_t length, std::size_t hop) {
  if (length == 0 || hop == 0) fail(ErrorCode::kInvalidArgument, "length and hop must be >= 1");
  std::vector<Signal> out;
  const std::size_t n = sig.samples.size();
  if (n < length) return out;
  const std::size_t count = 1 + (n - length) / hop;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Signal s;
    s.sample_rate_hz = sig.sample_rate_hz;
    s.meta = sig.meta;
    s.samples.assign(sig.samples.begin() + static_cast<std::ptrdiff_t>(i * hop),
                     sig.samples.begin() + static_cast<std::ptrdiff_t>(i * hop + length));
    out.push_back(std::move(s));
  }
  return out;
}

WavClip prepare_clip(const Signal& raw, const PipelineOptions& opts) {
  Signal sig = resample(raw, opts.target_hz);
  if (!all_zero(sig.samples)) {
    const bool constant = std::all_of(sig.samples.begin(), sig.samples.end(),
                                      [&](double v) { return v == sig.samples.front(); });
    if (opts.norm == NormMode::kStat && !constant) {
      sig = normalize_stat(sig, opts.stat_alpha, opts.stat_beta);
    } else {
      sig = normalize_peak(sig);
    }
  }
  return quantize_pcm16(sig);
}

}  // namespace sigproc
}  // namespace vibrodiag
