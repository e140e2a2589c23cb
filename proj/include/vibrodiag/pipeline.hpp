// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Glue between data, training stages and evaluation, shared by the CLI and
// the experiment harness.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vibrodiag/corpusgen.hpp"
#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/evalkit.hpp"
#include "vibrodiag/optim.hpp"
#include "vibrodiag/synthbench.hpp"

namespace vibrodiag {

/// Prompt question of the alignment stage; descriptions are its answers.
inline constexpr std::string_view kDescribeQuestion = "describe the vibration.";

struct LabeledClip {
  ManifestRecord record;
  WavClip clip;
};

namespace pipeline {

/// Model-ready clips named as synthbench::write_dataset names them.
std::vector<LabeledClip> from_dataset(const Dataset& ds, const sigproc::PipelineOptions& opts = {});

/// <dir>/manifest.jsonl plus the WAV files it lists.
std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir);

std::vector<ManifestRecord> records(const std::vector<LabeledClip>& clips);

/// Log-mel features per clip.
std::vector<MelSpec> features(const std::vector<LabeledClip>& clips, const ModelConfig& cfg);

/// One example per training clip; its sequences are the clip's descriptions.
std::vector<TrainExample> vsa_examples(const std::vector<LabeledClip>& clips,
                                       const std::vector<MelSpec>& mels,
                                       const std::vector<VibrationTextPair>& corpus,
                                       const ModelConfig& cfg);

/// One example per training clip: the canonical label, plus (when
/// `followups`) one follow-up exchange whose kind cycles with the clip's
/// position.
std::vector<TrainExample> gfc_examples(const std::vector<LabeledClip>& clips,
                                       const std::vector<MelSpec>& mels, const LabelSet& labels,
                                       const ModelConfig& cfg, bool followups = false);

struct SplitEval {
  std::vector<std::string> paths;
  std::vector<Diagnosis> diagnoses;
  std::vector<std::string> truths;
  MetricsReport report;
};

/// Diagnoses every clip of `split` and scores the parsed labels.
SplitEval evaluate_split(const Diagnoser& model, const std::vector<LabeledClip>& clips,
                         const std::string& split = "test");

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig vsa;
  TrainConfig gfc;
  bool run_vsa = true;
  bool gfc_followups = false;
  int vsa_variants = 2;
  std::uint64_t corpus_seed = 1;
  std::string label_set = "toy";

  /// Defaults for the toy run: VSA for 5 epochs, GFC for 40.
  static ExperimentConfig toy();
  nlohmann::json to_json() const;
};

struct ExperimentResult {
  ModelParams params;
  TrainResult vsa;
  TrainResult gfc;
  SplitEval test;
};

using StageCallback = std::function<void(Stage, const LossPoint&, int total_updates)>;

ExperimentResult run_experiment(const std::vector<LabeledClip>& clips, const ExperimentConfig& cfg,
                                const StageCallback& on_step = {});

}  // namespace pipeline
}  // namespace vibrodiag
