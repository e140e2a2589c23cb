// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Hand-written reverse pass through the model. T is the activation type:
// float for training, double for gradient checking. Parameters stay f32.

#pragma once

#include <cstddef>
#include <vector>

#include "vibrodiag/matrix.hpp"
#include "vibrodiag/net.hpp"
#include "vibrodiag/textcodec.hpp"

namespace vibrodiag::backprop {

template <typename T>
struct AdapterGrad {
  Matrix<T> dA;
  Matrix<T> dB;
};

template <typename T>
struct AdapterGradients {
  std::vector<AdapterGrad<T>> layers;  // indexed by LoraLinear::id
  std::size_t size() const;
};

/// Dense dL/dW_eff = sum of dy^T x for every adapted linear, indexed by
/// LoraLinear::id (empty for layers without an adapter). Summing these over
/// a window and projecting once is cheaper than per-example rank-r products.
template <typename T>
struct Gradients {
  std::vector<Matrix<T>> layers;

  static Gradients zeros_like(const ModelParams& params);
  void clear();
  /// this += other, element by element.
  void add(const Gradients& other);
  std::size_t size() const;
};

/// dB = s G A^T, dA = s B^T G for each adapted linear.
template <typename T>
AdapterGradients<T> to_adapter_gradients(const ModelParams& params, const Gradients<T>& dense);

/// Logits at `position` are scored against `token`.
struct TargetToken {
  int position = 0;
  TokenId token = 0;
};

struct DecoderPassSpec {
  TokenSeq tokens;
  std::vector<TargetToken> targets;
};

/// One clip, encoded once, shared by one or more supervised sequences.
struct Example {
  const MelSpec* mel = nullptr;
  std::vector<DecoderPassSpec> passes;
  int sequences = 0;  // supervised sequences folded into `passes`

  /// Teacher-forced sequence: tokens[target_begin..] are predicted. Shares a
  /// decoder pass with an earlier sequence when the scored prefixes agree.
  void add_sequence(const TokenSeq& tokens, int target_begin);
};

/// Sum over sequences of the summed token negative log-likelihood. When
/// `grads` is set, d(loss)/d(adapters) is added to it.
template <typename T>
double example_loss(const ModelParams& params, const MergedWeights<T>& weights,
                    const Example& example, Gradients<T>* grads);

/// Number of target tokens in the example.
std::size_t target_count(const Example& example);

extern template struct Gradients<float>;
extern template struct Gradients<double>;
extern template AdapterGradients<float> to_adapter_gradients(const ModelParams&,
                                                            const Gradients<float>&);
extern template AdapterGradients<double> to_adapter_gradients(const ModelParams&,
                                                             const Gradients<double>&);
extern template double example_loss<float>(const ModelParams&, const MergedWeights<float>&,
                                           const Example&, Gradients<float>*);
extern template double example_loss<double>(const ModelParams&, const MergedWeights<double>&,
                                            const Example&, Gradients<double>*);

}  // namespace vibrodiag::backprop
