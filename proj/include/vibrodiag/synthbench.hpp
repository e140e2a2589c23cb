// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vibrodiag/condition.hpp"
#include "vibrodiag/sigproc.hpp"

namespace vibrodiag {

struct DatasetSpec {
  std::vector<FaultCondition> classes;
  int clips_per_class = 250;
  double duration_s = 1.0;
  int fs_hz = 16000;
  std::pair<int, int> split_ratio{8, 2};
  std::uint64_t seed = 1;
  double speed_jitter = 0.05;  // relative half-width, uniform per clip
  bool randomize_load = true;  // uniform in [0, 1800] N per clip, else template load

  void validate() const;
};

struct DatasetClip {
  Signal signal;  // meta carries the per-clip condition
  int class_index = 0;
  int clip_index = 0;  // within its class
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<DatasetClip> train;
  std::vector<DatasetClip> test;
};

/// One line of manifest.jsonl. `path` is relative to the manifest directory.
struct ManifestRecord {
  std::string path;
  FaultCondition condition;
  std::string split;  // "train" | "test"
};

namespace synthbench {

inline constexpr double kMinSpeedRpm = 1000.0;
inline constexpr double kMaxSpeedRpm = 30000.0;
inline constexpr double kMaxLoadN = 1800.0;
inline constexpr double kResonanceHz = 3000.0;
inline constexpr double kDecaySeconds = 0.002;

/// Impulse rate of the defect: shaft frequency times a fixed multiplier
/// (inner 5.4, outer 3.6, roller 2.3, healthy 0).
double defect_frequency(const FaultCondition& cond);

/// Shaft harmonic plus pink-ish background; faulty conditions add an
/// impulse train at the defect frequency ringing a 3 kHz resonance.
Signal synth_signal(const FaultCondition& cond, double duration_s, int fs_hz,
                    std::uint64_t seed);

/// Stratified split; clip i of class c is seeded from (spec.seed, c, i).
/// Clips are synthesized in parallel.
Dataset make_dataset(const DatasetSpec& spec);

/// Healthy / inner 150 um / outer 250 um / roller 450 um at 6000 rpm.
std::vector<FaultCondition> toy_classes();
/// Healthy plus inner-ring and roller indentations of 450/250/150 um.
std::vector<FaultCondition> dirg_classes();
/// Normal, inner ring, outer ring.
std::vector<FaultCondition> hit_classes();

/// "<split>/<fault>_c<class>_<index>.wav"
std::string clip_path(const DatasetClip& clip, const std::string& split);

/// Writes every clip through sigproc::prepare_clip as
/// <out>/<clip_path> plus <out>/manifest.jsonl.
std::vector<ManifestRecord> write_dataset(const Dataset& ds, const std::filesystem::path& out,
                                          const sigproc::PipelineOptions& opts = {});

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace synthbench
}  // namespace vibrodiag
