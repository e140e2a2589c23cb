// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Toy audio-language model: log-mel front end, LoRA-adapted transformer
// encoder, stride-pooled audio tokens, and a causal decoder with one
// single-head cross-attention block per layer. Every linear map is a frozen
// W0 plus a rank-r adapter; biases are not used.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibrodiag/matrix.hpp"
#include "vibrodiag/sigproc.hpp"
#include "vibrodiag/textcodec.hpp"

namespace vibrodiag {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ff_dim = 128;
  int mel_bins = 40;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  int audio_downsample = 4;
  int vocab_size = vocab::kSize;
  int max_seq = 512;
  int lora_rank = 16;
  double lora_alpha = 32.0;
  int sample_rate_hz = kModelSampleRate;
  int n_fft = 512;
  std::uint64_t init_seed = 7;

  void validate() const;
  int d_k() const { return d_model / n_heads; }
  int win_samples() const;
  int hop_samples() const;
  double lora_scale() const { return lora_alpha / lora_rank; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Trainable low-rank update B*A; rank 0 means "no adapter".
struct LoraAdapter {
  Matrix<float> A;  // r x k
  Matrix<float> B;  // d x r
  int rank = 0;
  double alpha = 0.0;

  double scale() const { return rank > 0 ? alpha / rank : 0.0; }
};

struct LoraLinear {
  std::string name;
  int id = 0;        // slot in gradient buffers
  Matrix<float> w0;  // d x k, frozen
  LoraAdapter adapter;

  std::size_t in_dim() const { return w0.cols(); }
  std::size_t out_dim() const { return w0.rows(); }
};

struct EncoderLayer {
  LoraLinear q, k, v, o, ff1, ff2;
};

struct DecoderLayer {
  LoraLinear q, k, v, o;      // causal self-attention
  LoraLinear cq, ck, cv, co;  // cross-attention to audio tokens
  LoraLinear ff1, ff2;
};

struct ModelParams {
  ModelConfig cfg;
  LoraLinear in_proj;
  std::vector<EncoderLayer> encoder;
  Matrix<float> token_embedding;  // vocab x d, frozen
  std::vector<DecoderLayer> decoder;
  LoraLinear lm_head;

  /// Fixed traversal order; ids match positions.
  std::vector<LoraLinear*> linears();
  std::vector<const LoraLinear*> linears() const;

  /// Copy with every adapter removed (rank 0).
  ModelParams without_adapters() const;
};

/// Frozen weights ~ N(0, 1/k), embeddings ~ N(0, 1), A ~ N(0, 0.02^2), B = 0.
ModelParams init_params(const ModelConfig& cfg);

/// Adds N(0, std^2) noise to every B so adapter gradients are non-trivial.
void perturb_adapters(ModelParams& params, double stddev, std::uint64_t seed);

/// Effective weights W0 + (alpha/r) B A per linear, indexed by LoraLinear::id.
/// Rebuilt whenever the adapters change.
template <typename T>
struct MergedWeights {
  std::vector<Matrix<T>> w;
  std::vector<Matrix<T>> wt;  // transposes, k x d
};

template <typename T>
MergedWeights<T> merge_adapters(const ModelParams& params);

extern template MergedWeights<float> merge_adapters(const ModelParams&);
extern template MergedWeights<double> merge_adapters(const ModelParams&);

using MelSpec = Matrix<float>;         // frames x mel_bins
using AudioEmbedding = Matrix<float>;  // L_a x d_model

namespace net {

int frame_count(int n_samples, const ModelConfig& cfg);
int audio_token_count(int frames, const ModelConfig& cfg);

/// Triangular HTK-mel filters over the one-sided spectrum: mel_bins x (n_fft/2+1).
Matrix<double> mel_filterbank(const ModelConfig& cfg);

MelSpec mel_frontend(const WavClip& clip, const ModelConfig& cfg);

/// h = W0 x + (alpha/r) B (A x)
std::vector<double> lora_linear(const std::vector<double>& x, const Matrix<double>& w0,
                                const Matrix<double>& A, const Matrix<double>& B, double alpha);
std::vector<float> lora_linear(const std::vector<float>& x, const LoraLinear& layer);

struct ParamCount {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  std::int64_t total() const { return trainable + frozen; }
};

/// One adapted d x k layer at rank r.
ParamCount lora_param_count(std::int64_t d, std::int64_t k, std::int64_t r);
ParamCount trainable_param_count(const ModelConfig& cfg);

template <typename T>
struct CrossAttentionResult {
  Matrix<T> weights;  // L_t x L_a
  Matrix<T> context;  // L_t x d_v
};

/// softmax(z_text Wq (z_audio Wk)^T / sqrt(d_k)) (z_audio Wv), with d_k = rows of Wq.
template <typename T>
CrossAttentionResult<T> cross_attention(const Matrix<T>& z_text, const Matrix<T>& z_audio,
                                        const LoraLinear& wq, const LoraLinear& wk,
                                        const LoraLinear& wv);

AudioEmbedding encode_mel(const MelSpec& mel, const ModelParams& params);
AudioEmbedding encode_mel(const MelSpec& mel, const ModelParams& params,
                          const MergedWeights<float>& weights);
AudioEmbedding encode_audio(const WavClip& clip, const ModelParams& params);

/// Logits for the requested decoder positions (rows follow `positions`).
Matrix<float> decoder_logits(const ModelParams& params, const TokenSeq& tokens,
                             const AudioEmbedding& audio, const std::vector<int>& positions);
Matrix<float> decoder_logits(const ModelParams& params, const MergedWeights<float>& weights,
                             const TokenSeq& tokens, const AudioEmbedding& audio,
                             const std::vector<int>& positions);

/// Distribution over the vocabulary for the token after `prompt`.
std::vector<double> forward_next_token(const ModelParams& params, const TokenSeq& prompt,
                                       const AudioEmbedding& audio);
std::vector<double> forward_next_token(const ModelParams& params,
                                       const MergedWeights<float>& weights,
                                       const TokenSeq& prompt, const AudioEmbedding& audio);

std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace net
}  // namespace vibrodiag
