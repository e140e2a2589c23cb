// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/optim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <iterator>
#include <numeric>

#include "vibrodiag/error.hpp"
#include "vibrodiag/rng.hpp"

namespace vibrodiag {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

std::string to_string(Stage stage) { return stage == Stage::kVsa ? "vsa" : "gfc"; }

Stage stage_from_string(const std::string& name) {
  if (name == "vsa") return Stage::kVsa;
  if (name == "gfc") return Stage::kGfc;
  fail(ErrorCode::kInvalidArgument, "unknown stage '" + name + "' (expected vsa or gfc)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorCode::kInvalidArgument, "lr must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "warmup_frac must be in [0, 1)");
  }
  if (batch < 1 || grad_accum < 1) {
    fail(ErrorCode::kInvalidArgument, "batch and grad_accum must be >= 1");
  }
  if (epochs < 1 && updates < 1) fail(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (updates < 0) fail(ErrorCode::kInvalidArgument, "updates must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail(ErrorCode::kInvalidArgument, "adam_eps must be > 0");
}

int TrainConfig::total_updates(std::size_t n) const {
  if (updates > 0) return updates;
  const auto per = static_cast<std::size_t>(examples_per_update());
  return static_cast<int>(std::max<std::size_t>(1, static_cast<std::size_t>(epochs) * n / per));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"warmup_frac", warmup_frac},
          {"batch", batch},
          {"grad_accum", grad_accum},
          {"epochs", epochs},
          {"updates", updates},
          {"seed", seed},
          {"stage", to_string(stage)},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
  c.batch = j.value("batch", c.batch);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.epochs = j.value("epochs", c.epochs);
  c.updates = j.value("updates", c.updates);
  c.seed = j.value("seed", c.seed);
  c.stage = stage_from_string(j.value("stage", to_string(c.stage)));
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.validate();
  return c;
}

backprop::Example as_example(const TrainExample& ex) {
  backprop::Example out;
  out.mel = &ex.mel;
  for (const auto& s : ex.sequences) out.add_sequence(s.tokens, s.target_begin);
  return out;
}

namespace optim {

namespace {

int sequence_count(std::span<const TrainExample> batch) {
  std::size_t n = 0;
  for (const auto& ex : batch) n += ex.sequences.size();
  return static_cast<int>(n);
}

// Examples summed serially into one buffer. The group size is fixed, so the
// floating-point reduction order never depends on the thread count.
constexpr std::size_t kGroupSize = 4;

struct GroupSum {
  backprop::Gradients<float> grads;
  double loss = 0.0;
};

// Sums loss and dense gradients over `items` (indices into data) in a fixed
// order: groups in parallel, then groups reduced in index order into `out`.
void accumulate(const ModelParams& params, const MergedWeights<float>& weights,
                std::span<const TrainExample> data, std::span<const std::size_t> items,
                std::vector<GroupSum>& pool, backprop::Gradients<float>& out, double& loss) {
  const std::size_t groups = (items.size() + kGroupSize - 1) / kGroupSize;
  while (pool.size() < groups) pool.push_back({backprop::Gradients<float>::zeros_like(params), 0.0});
  std::vector<std::exception_ptr> errors(groups);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t g = 0; g < static_cast<std::ptrdiff_t>(groups); ++g) {
    auto& slot = pool[static_cast<std::size_t>(g)];
    try {
      slot.grads.clear();
      slot.loss = 0.0;
      const std::size_t lo = static_cast<std::size_t>(g) * kGroupSize;
      const std::size_t hi = std::min(items.size(), lo + kGroupSize);
      for (std::size_t i = lo; i < hi; ++i) {
        const auto ex = as_example(data[items[i]]);
        slot.loss += backprop::example_loss<float>(params, weights, ex, &slot.grads);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(g)] = std::current_exception();
    }
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (errors[g]) std::rethrow_exception(errors[g]);
    out.add(pool[g].grads);
    loss += pool[g].loss;
  }
}

void scale(backprop::Gradients<float>& g, float s) {
  for (auto& m : g.layers) {
    for (auto& v : m.values()) v *= s;
  }
}

}  // namespace

double ce_loss(const ModelParams& params, std::span<const TrainExample> batch) {
  const int n = sequence_count(batch);
  if (batch.empty() || n == 0) fail(ErrorCode::kEmptyBatch, "ce_loss needs at least one sequence");
  const auto weights = merge_adapters<double>(params);
  double total = 0.0;
  for (const auto& ex : batch) {
    total += backprop::example_loss<double>(params, weights, as_example(ex), nullptr);
  }
  return total / n;
}

double dpo_loss(double policy_logp_w, double policy_logp_l, double ref_logp_w, double ref_logp_l,
                double beta_dpo) {
  const double z = beta_dpo * ((policy_logp_w - ref_logp_w) - (policy_logp_l - ref_logp_l));
  // -log sigmoid(z) = softplus(-z)
  return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

double lr_at(int step, int total_steps, const TrainConfig& cfg) {
  const auto warmup = static_cast<int>(std::floor(cfg.warmup_frac * total_steps));
  if (warmup <= 0 || step >= warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(std::max(step, 0)) / warmup;
}

Adam::Adam(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  const auto ls = params.linears();
  m_.resize(ls.size());
  v_.resize(ls.size());
  for (const auto* l : ls) {
    const std::size_t n = l->adapter.A.size() + l->adapter.B.size();
    m_[static_cast<std::size_t>(l->id)].assign(n, 0.0);
    v_[static_cast<std::size_t>(l->id)].assign(n, 0.0);
  }
}

void Adam::step(ModelParams& params, const backprop::AdapterGradients<float>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto* l : params.linears()) {
    if (l->adapter.rank == 0) continue;
    const auto id = static_cast<std::size_t>(l->id);
    const auto& g = grads.layers.at(id);
    auto& m = m_[id];
    auto& v = v_[id];
    const std::size_t na = l->adapter.A.size();
    if (g.dA.size() != na || g.dB.size() != l->adapter.B.size()) {
      fail(ErrorCode::kShapeMismatch, l->name + ": gradient shape does not match adapter");
    }
    const auto update = [&](float* p, const float* gp, std::size_t n, std::size_t off) {
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = gp[i];
        double& mi = m[off + i];
        double& vi = v[off + i];
        mi = beta1_ * mi + (1.0 - beta1_) * gi;
        vi = beta2_ * vi + (1.0 - beta2_) * gi * gi;
        const double delta = lr * (mi / c1) / (std::sqrt(vi / c2) + eps_);
        p[i] = static_cast<float>(static_cast<double>(p[i]) - delta);
      }
    };
    update(l->adapter.A.data(), g.dA.data(), na, 0);
    update(l->adapter.B.data(), g.dB.data(), l->adapter.B.size(), na);
  }
}

backprop::AdapterGradients<float> batch_gradients(const ModelParams& params,
                                                  std::span<const TrainExample> batch) {
  const int n = sequence_count(batch);
  if (batch.empty() || n == 0) fail(ErrorCode::kEmptyBatch, "empty batch");
  const auto weights = merge_adapters<float>(params);
  std::vector<std::size_t> items(batch.size());
  std::iota(items.begin(), items.end(), std::size_t{0});
  std::vector<GroupSum> pool;
  auto sum = backprop::Gradients<float>::zeros_like(params);
  double loss = 0.0;
  accumulate(params, weights, batch, items, pool, sum, loss);
  scale(sum, 1.0f / static_cast<float>(n));
  return backprop::to_adapter_gradients(params, sum);
}

TrainResult train_stage(ModelParams& params, std::span<const TrainExample> data,
                        const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (data.empty()) fail(ErrorCode::kEmptyBatch, "training set is empty");
  for (const auto& ex : data) {
    if (ex.sequences.empty()) fail(ErrorCode::kEmptyBatch, "training example without sequences");
  }
  const int total = cfg.total_updates(data.size());
  Adam adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  // Example stream: one fresh permutation per epoch, consumed across updates.
  std::vector<std::size_t> order;
  std::uint64_t epoch = 0;
  std::size_t cursor = 0;
  const auto next_items = [&](std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor == order.size()) {
        order.resize(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(Rng::derive(cfg.seed, epoch++));
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      out.push_back(order[cursor++]);
    }
    return out;
  };

  TrainResult result;
  std::vector<GroupSum> pool;
  auto window = backprop::Gradients<float>::zeros_like(params);
  for (int step = 0; step < total; ++step) {
    const auto weights = merge_adapters<float>(params);
    window.clear();
    double loss = 0.0;
    int sequences = 0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      const auto items = next_items(static_cast<std::size_t>(cfg.batch));
      for (auto i : items) sequences += static_cast<int>(data[i].sequences.size());
      try {
        accumulate(params, weights, data, items, pool, window, loss);
      } catch (const Error& e) {
        fail(e.code(), "update " + std::to_string(step) + ", micro-batch " +
                           std::to_string(micro) + ": " + e.what());
      }
    }
    const double mean_loss = loss / sequences;
    if (!std::isfinite(mean_loss)) {
      fail(ErrorCode::kNonFiniteLoss, "update " + std::to_string(step) + ": loss is not finite");
    }
    scale(window, 1.0f / static_cast<float>(sequences));
    const double lr = lr_at(step, total, cfg);
    adam.step(params, backprop::to_adapter_gradients(params, window), lr);
    result.curve.push_back({step, lr, mean_loss});
    if (on_step) on_step(result.curve.back(), total);
  }
  return result;
}

GradCheckResult grad_check(const ModelParams& params, std::span<const TrainExample> batch,
                           int per_matrix, std::uint64_t seed, double eps) {
  if (per_matrix < 1) fail(ErrorCode::kInvalidArgument, "per_matrix must be >= 1");
  const int n = sequence_count(batch);
  if (batch.empty() || n == 0) fail(ErrorCode::kEmptyBatch, "grad_check needs a batch");
  std::vector<backprop::Example> examples;
  for (const auto& ex : batch) examples.push_back(as_example(ex));

  const auto mean_loss = [&](const ModelParams& p, backprop::Gradients<double>* g) {
    const auto w = merge_adapters<double>(p);
    double total = 0.0;
    for (const auto& ex : examples) total += backprop::example_loss<double>(p, w, ex, g);
    return total / n;
  };

  auto dense = backprop::Gradients<double>::zeros_like(params);
  mean_loss(params, &dense);
  for (auto& m : dense.layers) {
    for (auto& v : m.values()) v /= n;
  }
  const auto analytic = backprop::to_adapter_gradients(params, dense);

  ModelParams probe = params;
  Rng rng(seed);
  GradCheckResult out;
  for (auto* l : probe.linears()) {
    if (l->adapter.rank == 0) continue;
    for (int which = 0; which < 2; ++which) {
      Matrix<float>& m = which == 0 ? l->adapter.A : l->adapter.B;
      const auto& g = analytic.layers[static_cast<std::size_t>(l->id)];
      const Matrix<double>& ga = which == 0 ? g.dA : g.dB;
      for (int s = 0; s < per_matrix; ++s) {
        const std::size_t idx = rng.below(m.size());
        const float orig = m.data()[idx];
        const auto up = static_cast<float>(orig + eps);
        const auto dn = static_cast<float>(orig - eps);
        m.data()[idx] = up;
        const double lu = mean_loss(probe, nullptr);
        m.data()[idx] = dn;
        const double ld = mean_loss(probe, nullptr);
        m.data()[idx] = orig;
        const double num = (lu - ld) / (static_cast<double>(up) - static_cast<double>(dn));
        const double an = ga.data()[idx];
        const double rel =
            std::abs(an - num) / std::max({std::abs(an), std::abs(num), 1e-8});
        ++out.coordinates;
        if (out.worst.empty() || rel > out.max_rel_error) {
          out.max_rel_error = rel;
          out.worst = l->name + (which == 0 ? ".A[" : ".B[") + std::to_string(idx) + "]";
        }
      }
    }
  }
  return out;
}

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << "step,lr,loss\n";
  char line[96];
  for (const auto& p : curve) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g\n", p.step, p.lr, p.loss);
    out << line;
  }
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

}  // namespace optim

// Container: 8-byte magic, u64 manifest length, JSON manifest, f32 blob.
namespace {

constexpr char kMagic[8] = {'V', 'B', 'D', 'G', 'C', 'K', 'P', 'T'};

struct TensorRef {
  std::string name;
  Matrix<float>* m;
};

std::vector<TensorRef> tensors(ModelParams& p) {
  std::vector<TensorRef> out;
  for (auto* l : p.linears()) {
    out.push_back({l->name + ".w0", &l->w0});
    if (l->adapter.rank > 0) {
      out.push_back({l->name + ".lora_A", &l->adapter.A});
      out.push_back({l->name + ".lora_B", &l->adapter.B});
    }
  }
  out.push_back({"dec.token_embedding", &p.token_embedding});
  return out;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const nlohmann::json& meta) {
  ModelParams copy = params;
  const auto refs = tensors(copy);
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : refs) {
    dir.push_back({{"name", t.name},
                   {"shape", {t.m->rows(), t.m->cols()}},
                   {"offset", offset},
                   {"dtype", "f32le"}});
    offset += t.m->size() * sizeof(float);
  }
  const nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                                   {"model_config", params.cfg.to_json()},
                                   {"vocab", vocab::to_json()},
                                   {"meta", meta},
                                   {"tensors", dir},
                                   {"blob_bytes", offset}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : refs) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.m->data());
    out.insert(out.end(), bytes, bytes + t.m->size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic) fail(ErrorCode::kTruncatedFile, "checkpoint shorter than magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorCode::kBadMagic, "not a vibrodiag checkpoint");
  }
  if (bytes.size() < 16) fail(ErrorCode::kTruncatedFile, "checkpoint header truncated");
  const std::uint64_t mlen = get_u64(bytes.data() + 8);
  if (mlen > bytes.size() - 16) fail(ErrorCode::kTruncatedFile, "checkpoint manifest truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(mlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidLayout, std::string("checkpoint manifest: ") + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kVersionMismatch, "checkpoint format_version " + std::to_string(version) +
                                          ", expected " + std::to_string(kCheckpointVersion));
  }
  if (!vocab::matches(manifest.at("vocab"))) {
    fail(ErrorCode::kInvalidLayout, "checkpoint vocabulary differs from this build");
  }
  const std::uint8_t* blob = bytes.data() + 16 + mlen;
  const std::uint64_t blob_len = bytes.size() - 16 - mlen;
  if (blob_len < manifest.at("blob_bytes").get<std::uint64_t>()) {
    fail(ErrorCode::kTruncatedFile, "checkpoint tensor data truncated");
  }

  Checkpoint ck;
  ck.params = init_params(ModelConfig::from_json(manifest.at("model_config")));
  ck.meta = manifest.value("meta", nlohmann::json::object());
  const auto refs = tensors(ck.params);
  std::vector<bool> seen(refs.size(), false);
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = std::find_if(refs.begin(), refs.end(), [&](const TensorRef& r) { return r.name == name; });
    if (it == refs.end()) fail(ErrorCode::kInvalidLayout, "unexpected tensor " + name);
    if (entry.value("dtype", "") != "f32le") fail(ErrorCode::kInvalidLayout, name + ": dtype must be f32le");
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != it->m->rows() || shape[1] != it->m->cols()) {
      fail(ErrorCode::kShapeMismatch, name + ": shape does not match model_config");
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t len = it->m->size() * sizeof(float);
    if (offset > blob_len || len > blob_len - offset) {
      fail(ErrorCode::kTruncatedFile, name + ": tensor data truncated");
    }
    std::memcpy(it->m->data(), blob + offset, len);
    seen[static_cast<std::size_t>(it - refs.begin())] = true;
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!seen[i]) fail(ErrorCode::kInvalidLayout, "missing tensor " + refs[i].name);
  }
  return ck;
}

void save_checkpoint(const ModelParams& params, const nlohmann::json& meta,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace vibrodiag
