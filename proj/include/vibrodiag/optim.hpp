// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Adapter-only training: losses, warmup schedule, Adam, gradient checking
// and the checkpoint container.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibrodiag/backprop.hpp"
#include "vibrodiag/net.hpp"
#include "vibrodiag/textcodec.hpp"

namespace vibrodiag {

enum class Stage { kVsa, kGfc };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct TrainConfig {
  double lr = 3e-3;
  double warmup_frac = 0.05;
  int batch = 32;
  int grad_accum = 16;
  int epochs = 1;
  int updates = 0;  // overrides epochs when > 0
  std::uint64_t seed = 1;
  Stage stage = Stage::kGfc;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  int examples_per_update() const { return batch * grad_accum; }
  /// Number of optimizer updates for a dataset of `n` examples.
  int total_updates(std::size_t n) const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

/// Teacher-forced sequence; tokens[target_begin..] are scored.
struct TrainSequence {
  TokenSeq tokens;
  int target_begin = 0;
};

/// One clip with every sequence that is trained against it.
struct TrainExample {
  MelSpec mel;
  std::vector<TrainSequence> sequences;
};

backprop::Example as_example(const TrainExample& ex);

struct PreferenceExample {
  TokenSeq prompt;
  TokenSeq y_w;
  TokenSeq y_l;
  double beta_dpo = 0.1;
};

struct LossPoint {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;
};

using StepCallback = std::function<void(const LossPoint&, int total_updates)>;

namespace optim {

/// Mean over sequences of the summed target-token negative log-likelihood,
/// evaluated in double precision.
double ce_loss(const ModelParams& params, std::span<const TrainExample> batch);

/// -log sigmoid(beta * ((logp_w - ref_w) - (logp_l - ref_l)))
double dpo_loss(double policy_logp_w, double policy_logp_l, double ref_logp_w, double ref_logp_l,
                double beta_dpo);

/// Linear ramp from 0 over floor(warmup_frac * total_steps) steps, then lr.
double lr_at(int step, int total_steps, const TrainConfig& cfg);

class Adam {
 public:
  Adam(const ModelParams& params, double beta1, double beta2, double eps);

  /// One update of every adapter from mean gradients.
  void step(ModelParams& params, const backprop::AdapterGradients<float>& grads, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // per linear, A then B
};

/// Trains the adapters in place. Examples stream through per-epoch shuffles;
/// every update averages the gradient over batch * grad_accum examples.
/// Results do not depend on the OpenMP thread count.
TrainResult train_stage(ModelParams& params, std::span<const TrainExample> data,
                        const TrainConfig& cfg, const StepCallback& on_step = {});

/// Mean-loss gradient of every adapter over `batch`, in float as used by
/// train_stage.
backprop::AdapterGradients<float> batch_gradients(const ModelParams& params,
                                                  std::span<const TrainExample> batch);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<linear>.<A|B>[index]"
};

/// Central differences (eps on the f32 parameter, f64 activations) against
/// the analytic gradient at `per_matrix` random coordinates of every A and B.
GradCheckResult grad_check(const ModelParams& params, std::span<const TrainExample> batch,
                           int per_matrix, std::uint64_t seed, double eps = 1e-3);

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path);

}  // namespace optim

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  nlohmann::json meta;  // free-form provenance, e.g. training configs
};

void save_checkpoint(const ModelParams& params, const nlohmann::json& meta,
                     const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace vibrodiag
