// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "vibrodiag/error.hpp"
#include "vibrodiag/rng.hpp"

namespace vibrodiag {

std::string_view to_string(FaultType type) {
  switch (type) {
    case FaultType::kHealthy: return "healthy";
    case FaultType::kInnerRace: return "inner_race";
    case FaultType::kOuterRace: return "outer_race";
    case FaultType::kRoller: return "roller";
  }
  return "healthy";
}

FaultType fault_type_from_string(std::string_view name) {
  if (name == "healthy") return FaultType::kHealthy;
  if (name == "inner_race") return FaultType::kInnerRace;
  if (name == "outer_race") return FaultType::kOuterRace;
  if (name == "roller") return FaultType::kRoller;
  fail(ErrorCode::kInvalidSpec, "unknown fault type '" + std::string(name) + "'");
}

void FaultCondition::validate() const {
  const bool healthy = fault_type == FaultType::kHealthy;
  if (healthy != (severity_um == 0)) {
    fail(ErrorCode::kInvalidSpec, "healthy conditions must have severity 0 and faults must not");
  }
  if (severity_um != 0 && severity_um != 150 && severity_um != 250 && severity_um != 450) {
    fail(ErrorCode::kInvalidSpec, "severity must be one of 0, 150, 250, 450 um");
  }
  if (!(speed_rpm >= synthbench::kMinSpeedRpm && speed_rpm <= synthbench::kMaxSpeedRpm)) {
    fail(ErrorCode::kInvalidSpec, "speed outside [1000, 30000] rpm");
  }
  if (!(load_n >= 0.0 && load_n <= synthbench::kMaxLoadN)) {
    fail(ErrorCode::kInvalidSpec, "load outside [0, 1800] N");
  }
}

void DatasetSpec::validate() const {
  if (classes.empty()) fail(ErrorCode::kInvalidSpec, "no classes");
  for (const auto& c : classes) c.validate();
  if (clips_per_class < 1) fail(ErrorCode::kInvalidSpec, "clips_per_class must be >= 1");
  if (!(duration_s > 0.0)) fail(ErrorCode::kInvalidSpec, "duration must be positive");
  if (fs_hz < 8000) fail(ErrorCode::kInvalidSpec, "fs must be >= 8000 Hz");
  if (split_ratio.first < 0 || split_ratio.second < 0 ||
      split_ratio.first + split_ratio.second <= 0) {
    fail(ErrorCode::kInvalidSpec, "invalid split ratio");
  }
  if (speed_jitter < 0.0 || speed_jitter >= 1.0) fail(ErrorCode::kInvalidSpec, "bad speed jitter");
}

namespace synthbench {
namespace {

double severity_gain(int severity_um) {
  switch (severity_um) {
    case 150: return 1.0;
    case 250: return 1.6;
    case 450: return 2.5;
    default: return 0.0;
  }
}

// Larger indentations ring with lower Q.
double decay_scale(int severity_um) {
  switch (severity_um) {
    case 250: return 0.9;
    case 450: return 0.8;
    default: return 1.0;
  }
}

constexpr double kShaftAmp = 0.2;
constexpr double kShaftHarmonicAmp = 0.05;
constexpr double kNoiseAmp = 0.05;
constexpr double kPinkPole = 0.9;

}  // namespace

double defect_frequency(const FaultCondition& cond) {
  if (!(cond.speed_rpm > 0.0)) fail(ErrorCode::kInvalidSpec, "speed must be positive");
  const double shaft_hz = cond.speed_rpm / 60.0;
  switch (cond.fault_type) {
    case FaultType::kInnerRace: return 5.4 * shaft_hz;
    case FaultType::kOuterRace: return 3.6 * shaft_hz;
    case FaultType::kRoller: return 2.3 * shaft_hz;
    case FaultType::kHealthy: return 0.0;
  }
  return 0.0;
}

Signal synth_signal(const FaultCondition& cond, double duration_s, int fs_hz,
                    std::uint64_t seed) {
  if (!(duration_s > 0.0)) fail(ErrorCode::kInvalidSpec, "duration must be positive");
  if (fs_hz < 8000) fail(ErrorCode::kInvalidSpec, "fs must be >= 8000 Hz");
  cond.validate();

  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs_hz));
  if (n == 0) fail(ErrorCode::kInvalidSpec, "duration shorter than one sample");
  const double fs = fs_hz;
  const double shaft_hz = cond.speed_rpm / 60.0;

  // Draw order is fixed and independent of severity and load, so clips that
  // differ only in those fields share every random draw.
  Rng rng(seed);
  const double phase1 = rng.uniform(0.0, 2.0 * M_PI);
  const double phase2 = rng.uniform(0.0, 2.0 * M_PI);

  Signal sig;
  sig.sample_rate_hz = fs_hz;
  sig.meta = cond;
  sig.samples.resize(n);
  const double pink_norm = std::sqrt(1.0 - kPinkPole * kPinkPole);
  double pink = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double white = rng.normal();
    pink = kPinkPole * pink + white;
    sig.samples[i] = kShaftAmp * std::sin(2.0 * M_PI * shaft_hz * t + phase1) +
                     kShaftHarmonicAmp * std::sin(4.0 * M_PI * shaft_hz * t + phase2) +
                     kNoiseAmp * (0.5 * pink * pink_norm + 0.5 * white);
  }

  const double fd = defect_frequency(cond);
  if (fd > 0.0) {
    const double amp = severity_gain(cond.severity_um) * (0.5 + cond.load_n / kMaxLoadN);
    const double tau = kDecaySeconds * decay_scale(cond.severity_um);
    const auto ring_len = static_cast<std::size_t>(10.0 * tau * fs);
    std::vector<double> ring(ring_len);
    for (std::size_t j = 0; j < ring_len; ++j) {
      const double t = static_cast<double>(j) / fs;
      ring[j] = std::exp(-t / tau) * std::sin(2.0 * M_PI * kResonanceHz * t);
    }
    const double period = 1.0 / fd;
    double t_k = rng.uniform(0.0, period);
    while (t_k < duration_s) {
      const double a_k = amp * (1.0 + 0.1 * rng.normal());
      const auto start = static_cast<std::size_t>(std::llround(t_k * fs));
      const std::size_t stop = std::min(n, start + ring_len);
      for (std::size_t i = start; i < stop; ++i) sig.samples[i] += a_k * ring[i - start];
      t_k += period * (1.0 + 0.01 * rng.normal());
    }
  }
  return sig;
}

Dataset make_dataset(const DatasetSpec& spec) {
  spec.validate();
  const int total_ratio = spec.split_ratio.first + spec.split_ratio.second;
  const int n_test = static_cast<int>(
      std::lround(static_cast<double>(spec.clips_per_class) * spec.split_ratio.second / total_ratio));
  const int n_train = spec.clips_per_class - n_test;
  if (n_test < 1) fail(ErrorCode::kInvalidSpec, "a class would get 0 test clips");
  if (n_train < 1) fail(ErrorCode::kInvalidSpec, "a class would get 0 train clips");

  const int n_classes = static_cast<int>(spec.classes.size());
  const int total = n_classes * spec.clips_per_class;
  std::vector<DatasetClip> clips(static_cast<std::size_t>(total));

#pragma omp parallel for schedule(dynamic)
  for (int flat = 0; flat < total; ++flat) {
    const int c = flat / spec.clips_per_class;
    const int i = flat % spec.clips_per_class;
    const std::uint64_t clip_seed = Rng::derive(Rng::derive(spec.seed, c), i);
    Rng cond_rng(Rng::derive(clip_seed, 1));
    FaultCondition cond = spec.classes[static_cast<std::size_t>(c)];
    cond.speed_rpm = std::clamp(cond.speed_rpm * (1.0 + spec.speed_jitter * cond_rng.uniform(-1.0, 1.0)),
                                kMinSpeedRpm, kMaxSpeedRpm);
    if (spec.randomize_load) cond.load_n = cond_rng.uniform(0.0, kMaxLoadN);

    DatasetClip& clip = clips[static_cast<std::size_t>(flat)];
    clip.signal = synth_signal(cond, spec.duration_s, spec.fs_hz, clip_seed);
    clip.class_index = c;
    clip.clip_index = i;
    clip.seed = clip_seed;
  }

  Dataset ds;
  ds.train.reserve(static_cast<std::size_t>(n_classes * n_train));
  ds.test.reserve(static_cast<std::size_t>(n_classes * n_test));
  for (auto& clip : clips) {
    (clip.clip_index < n_train ? ds.train : ds.test).push_back(std::move(clip));
  }
  return ds;
}

std::vector<FaultCondition> toy_classes() {
  return {
      {FaultType::kHealthy, 0, 6000.0, 900.0},
      {FaultType::kInnerRace, 150, 6000.0, 900.0},
      {FaultType::kOuterRace, 250, 6000.0, 900.0},
      {FaultType::kRoller, 450, 6000.0, 900.0},
  };
}

std::vector<FaultCondition> dirg_classes() {
  return {
      {FaultType::kHealthy, 0, 6000.0, 900.0},   {FaultType::kInnerRace, 450, 6000.0, 900.0},
      {FaultType::kInnerRace, 250, 6000.0, 900.0}, {FaultType::kInnerRace, 150, 6000.0, 900.0},
      {FaultType::kRoller, 450, 6000.0, 900.0},  {FaultType::kRoller, 250, 6000.0, 900.0},
      {FaultType::kRoller, 150, 6000.0, 900.0},
  };
}

std::vector<FaultCondition> hit_classes() {
  return {
      {FaultType::kHealthy, 0, 6000.0, 900.0},
      {FaultType::kInnerRace, 250, 6000.0, 900.0},
      {FaultType::kOuterRace, 250, 6000.0, 900.0},
  };
}

std::string clip_path(const DatasetClip& clip, const std::string& split) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s_c%d_%04d.wav",
                std::string(to_string(clip.signal.meta->fault_type)).c_str(), clip.class_index,
                clip.clip_index);
  return split + "/" + buf;
}

std::vector<ManifestRecord> write_dataset(const Dataset& ds, const std::filesystem::path& out,
                                          const sigproc::PipelineOptions& opts) {
  std::vector<ManifestRecord> records;
  const auto emit = [&](const std::vector<DatasetClip>& clips, const std::string& split) {
    std::filesystem::create_directories(out / split);
    std::vector<ManifestRecord> part(clips.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(clips.size()); ++i) {
      const auto& clip = clips[static_cast<std::size_t>(i)];
      const std::string rel = clip_path(clip, split);
      sigproc::write_wav(sigproc::prepare_clip(clip.signal, opts), out / rel);
      part[static_cast<std::size_t>(i)] = {rel, *clip.signal.meta, split};
    }
    records.insert(records.end(), part.begin(), part.end());
  };
  emit(ds.train, "train");
  emit(ds.test, "test");
  write_manifest(records, out / "manifest.jsonl");
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["path"] = r.path;
    j["fault_type"] = std::string(to_string(r.condition.fault_type));
    j["severity_um"] = r.condition.severity_um;
    j["speed_rpm"] = r.condition.speed_rpm;
    j["load_n"] = r.condition.load_n;
    j["split"] = r.split;
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.path = j.at("path").get<std::string>();
      r.condition.fault_type = fault_type_from_string(j.at("fault_type").get<std::string>());
      r.condition.severity_um = j.at("severity_um").get<int>();
      r.condition.speed_rpm = j.at("speed_rpm").get<double>();
      r.condition.load_n = j.at("load_n").get<double>();
      r.split = j.value("split", "train");
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kInvalidSpec,
           path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace synthbench
}  // namespace vibrodiag
