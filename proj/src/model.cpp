// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>

#include "vibrodiag/backprop.hpp"
#include "vibrodiag/error.hpp"
#include "vibrodiag/kernels.hpp"
#include "vibrodiag/net.hpp"
#include "vibrodiag/rng.hpp"

namespace vibrodiag {

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    fail(ErrorCode::kInvalidSpec, "d_model must be a positive multiple of n_heads");
  }
  if (audio_downsample < 1) fail(ErrorCode::kInvalidSpec, "audio_downsample must be >= 1");
  if (encoder_layers < 0 || decoder_layers < 0 || ff_dim < 1 || mel_bins < 1) {
    fail(ErrorCode::kInvalidSpec, "bad layer sizes");
  }
  if (vocab_size != vocab::kSize) fail(ErrorCode::kInvalidSpec, "vocab_size must be 262");
  if (lora_rank < 0 || (lora_rank > 0 && lora_alpha <= 0)) {
    fail(ErrorCode::kInvalidSpec, "bad LoRA rank/alpha");
  }
  if (win_samples() < 1 || hop_samples() < 1 || n_fft < win_samples()) {
    fail(ErrorCode::kInvalidSpec, "bad STFT framing");
  }
}

int ModelConfig::win_samples() const {
  return static_cast<int>(std::lround(frame_ms * sample_rate_hz / 1000.0));
}

int ModelConfig::hop_samples() const {
  return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},           {"n_heads", n_heads},
          {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
          {"ff_dim", ff_dim},             {"mel_bins", mel_bins},
          {"frame_ms", frame_ms},         {"hop_ms", hop_ms},
          {"audio_downsample", audio_downsample}, {"vocab_size", vocab_size},
          {"max_seq", max_seq},           {"lora_rank", lora_rank},
          {"lora_alpha", lora_alpha},     {"sample_rate_hz", sample_rate_hz},
          {"n_fft", n_fft},               {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.mel_bins = j.value("mel_bins", c.mel_bins);
  c.frame_ms = j.value("frame_ms", c.frame_ms);
  c.hop_ms = j.value("hop_ms", c.hop_ms);
  c.audio_downsample = j.value("audio_downsample", c.audio_downsample);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.n_fft = j.value("n_fft", c.n_fft);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

namespace {

struct LinearShape {
  std::string name;
  int d;
  int k;
};

// Shapes in traversal order; shared by init_params and the parameter count.
std::vector<LinearShape> linear_shapes(const ModelConfig& c) {
  std::vector<LinearShape> s;
  const int d = c.d_model;
  s.push_back({"enc.in_proj", d, c.mel_bins});
  for (int l = 0; l < c.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o"}) s.push_back({p + n, d, d});
    s.push_back({p + "ff1", c.ff_dim, d});
    s.push_back({p + "ff2", d, c.ff_dim});
  }
  for (int l = 0; l < c.decoder_layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    for (const char* n : {"self.q", "self.k", "self.v", "self.o"}) s.push_back({p + n, d, d});
    s.push_back({p + "cross.q", c.d_k(), d});
    s.push_back({p + "cross.k", c.d_k(), d});
    s.push_back({p + "cross.v", d, d});
    s.push_back({p + "cross.o", d, d});
    s.push_back({p + "ff1", c.ff_dim, d});
    s.push_back({p + "ff2", d, c.ff_dim});
  }
  s.push_back({"lm_head", c.vocab_size, d});
  return s;
}

int adapter_rank(const ModelConfig& c, int d, int k) { return std::min({c.lora_rank, d, k}); }

void fill_normal(Matrix<float>& m, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal() * stddev);
}

LoraLinear make_linear(const ModelConfig& c, const LinearShape& s, int id) {
  LoraLinear layer;
  layer.name = s.name;
  layer.id = id;
  layer.w0.resize(static_cast<std::size_t>(s.d), static_cast<std::size_t>(s.k));
  fill_normal(layer.w0, 1.0 / std::sqrt(static_cast<double>(s.k)),
              Rng::derive(c.init_seed, static_cast<std::uint64_t>(id)));
  const int r = adapter_rank(c, s.d, s.k);
  layer.adapter.rank = r;
  layer.adapter.alpha = c.lora_alpha;
  layer.adapter.A.resize(static_cast<std::size_t>(r), static_cast<std::size_t>(s.k));
  layer.adapter.B.resize(static_cast<std::size_t>(s.d), static_cast<std::size_t>(r));
  fill_normal(layer.adapter.A, 0.02,
              Rng::derive(c.init_seed, 10000 + static_cast<std::uint64_t>(id)));
  return layer;
}

}  // namespace

std::vector<LoraLinear*> ModelParams::linears() {
  std::vector<LoraLinear*> out{&in_proj};
  for (auto& l : encoder) {
    for (auto* p : {&l.q, &l.k, &l.v, &l.o, &l.ff1, &l.ff2}) out.push_back(p);
  }
  for (auto& l : decoder) {
    for (auto* p : {&l.q, &l.k, &l.v, &l.o, &l.cq, &l.ck, &l.cv, &l.co, &l.ff1, &l.ff2}) {
      out.push_back(p);
    }
  }
  out.push_back(&lm_head);
  return out;
}

std::vector<const LoraLinear*> ModelParams::linears() const {
  auto mut = const_cast<ModelParams*>(this)->linears();
  return {mut.begin(), mut.end()};
}

ModelParams ModelParams::without_adapters() const {
  ModelParams out = *this;
  for (auto* l : out.linears()) {
    l->adapter = LoraAdapter{};
  }
  return out;
}

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  const auto shapes = linear_shapes(cfg);
  std::vector<LoraLinear> layers;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    layers.push_back(make_linear(cfg, shapes[i], static_cast<int>(i)));
  }
  ModelParams p;
  p.cfg = cfg;
  std::size_t next = 0;
  p.in_proj = std::move(layers[next++]);
  p.encoder.resize(static_cast<std::size_t>(cfg.encoder_layers));
  for (auto& l : p.encoder) {
    for (auto* dst : {&l.q, &l.k, &l.v, &l.o, &l.ff1, &l.ff2}) *dst = std::move(layers[next++]);
  }
  p.decoder.resize(static_cast<std::size_t>(cfg.decoder_layers));
  for (auto& l : p.decoder) {
    for (auto* dst : {&l.q, &l.k, &l.v, &l.o, &l.cq, &l.ck, &l.cv, &l.co, &l.ff1, &l.ff2}) {
      *dst = std::move(layers[next++]);
    }
  }
  p.lm_head = std::move(layers[next++]);
  p.token_embedding.resize(static_cast<std::size_t>(cfg.vocab_size),
                           static_cast<std::size_t>(cfg.d_model));
  fill_normal(p.token_embedding, 1.0, Rng::derive(cfg.init_seed, 999));
  return p;
}

void perturb_adapters(ModelParams& params, double stddev, std::uint64_t seed) {
  for (auto* l : params.linears()) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(l->id)));
    for (auto& v : l->adapter.B.values()) v += static_cast<float>(rng.normal() * stddev);
  }
}

namespace net {

int frame_count(int n_samples, const ModelConfig& cfg) {
  const int win = cfg.win_samples();
  if (n_samples < win) return 0;
  return 1 + (n_samples - win) / cfg.hop_samples();
}

int audio_token_count(int frames, const ModelConfig& cfg) {
  return (frames + cfg.audio_downsample - 1) / cfg.audio_downsample;
}

ParamCount lora_param_count(std::int64_t d, std::int64_t k, std::int64_t r) {
  return {r * (d + k), d * k};
}

ParamCount trainable_param_count(const ModelConfig& cfg) {
  cfg.validate();
  ParamCount total;
  for (const auto& s : linear_shapes(cfg)) {
    const auto c = lora_param_count(s.d, s.k, adapter_rank(cfg, s.d, s.k));
    total.trainable += c.trainable;
    total.frozen += c.frozen;
  }
  total.frozen += static_cast<std::int64_t>(cfg.vocab_size) * cfg.d_model;
  return total;
}

std::vector<double> lora_linear(const std::vector<double>& x, const Matrix<double>& w0,
                                const Matrix<double>& A, const Matrix<double>& B, double alpha) {
  const std::size_t d = w0.rows();
  const std::size_t k = w0.cols();
  const std::size_t r = A.rows();
  if (x.size() != k || (r > 0 && (A.cols() != k || B.rows() != d || B.cols() != r))) {
    fail(ErrorCode::kShapeMismatch, "lora_linear operand shapes do not conform");
  }
  std::vector<double> h(d);
  for (std::size_t i = 0; i < d; ++i) h[i] = kernels::dot(w0.data() + i * k, x.data(), k);
  if (r == 0) return h;
  std::vector<double> u(r);
  for (std::size_t j = 0; j < r; ++j) u[j] = kernels::dot(A.data() + j * k, x.data(), k);
  const double s = alpha / static_cast<double>(r);
  for (std::size_t i = 0; i < d; ++i) h[i] += s * kernels::dot(B.data() + i * r, u.data(), r);
  return h;
}

std::vector<float> lora_linear(const std::vector<float>& x, const LoraLinear& layer) {
  const std::size_t d = layer.out_dim();
  const std::size_t k = layer.in_dim();
  const std::size_t r = static_cast<std::size_t>(layer.adapter.rank);
  if (x.size() != k) fail(ErrorCode::kShapeMismatch, "lora_linear input has wrong length");
  std::vector<float> h(d);
  for (std::size_t i = 0; i < d; ++i) h[i] = kernels::dot(layer.w0.data() + i * k, x.data(), k);
  if (r == 0) return h;
  std::vector<float> u(r);
  for (std::size_t j = 0; j < r; ++j) {
    u[j] = kernels::dot(layer.adapter.A.data() + j * k, x.data(), k);
  }
  const auto s = static_cast<float>(layer.adapter.scale());
  for (std::size_t i = 0; i < d; ++i) {
    h[i] += s * kernels::dot(layer.adapter.B.data() + i * r, u.data(), r);
  }
  return h;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace net

// ---------------------------------------------------------------------------
// Forward and reverse passes.

namespace {

constexpr double kLayerNormEps = 1e-5;

// Sinusoidal positions, cached per (rows, d).
const Matrix<double>& positions(std::size_t rows, std::size_t d) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, Matrix<double>> cache;
  std::lock_guard lock(mu);
  auto [it, inserted] = cache.try_emplace({rows, d});
  if (inserted) {
    Matrix<double>& pe = it->second;
    pe.resize(rows, d);
    for (std::size_t p = 0; p < rows; ++p) {
      for (std::size_t i = 0; i < d; i += 2) {
        const double a = static_cast<double>(p) /
                         std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
        pe(p, i) = std::sin(a);
        if (i + 1 < d) pe(p, i + 1) = std::cos(a);
      }
    }
  }
  return it->second;
}

template <typename T>
void add_positions(Matrix<T>& x) {
  const auto& pe = positions(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += static_cast<T>(pe.data()[i]);
}

template <typename T>
void layer_norm_fwd(const Matrix<T>& x, Matrix<T>& y, std::vector<T>& inv_std) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  y.resize(n, d);
  inv_std.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.data() + i * d;
    T* yi = y.data() + i * d;
    T mean{};
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<T>(d);
    T var{};
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) yi[j] = (xi[j] - mean) * inv;
  }
}

// dx += inv * (dy - mean(dy) - y * mean(dy * y))
template <typename T>
void layer_norm_bwd(const Matrix<T>& y, const std::vector<T>& inv_std, const Matrix<T>& dy,
                    Matrix<T>& dx) {
  const std::size_t n = y.rows();
  const std::size_t d = y.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const T* yi = y.data() + i * d;
    const T* gi = dy.data() + i * d;
    T* oi = dx.data() + i * d;
    T mg{};
    T mgy{};
    for (std::size_t j = 0; j < d; ++j) {
      mg += gi[j];
      mgy += gi[j] * yi[j];
    }
    mg /= static_cast<T>(d);
    mgy /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) oi[j] += inv_std[i] * (gi[j] - mg - yi[j] * mgy);
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T x) {
  const T t = std::tanh(static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x));
  return static_cast<T>(0.5) * x * (T{1} + t);
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  const T t = std::tanh(c * (x + a * x * x * x));
  return static_cast<T>(0.5) * (T{1} + t) +
         static_cast<T>(0.5) * x * (T{1} - t * t) * c * (T{1} + T{3} * a * x * x);
}

template <typename T>
Matrix<T> merge_one(const LoraLinear& L) {
  Matrix<T> w = L.w0.cast<T>();
  const auto r = static_cast<std::size_t>(L.adapter.rank);
  if (r == 0) return w;
  const std::size_t d = L.out_dim();
  const std::size_t k = L.in_dim();
  const Matrix<T> b = L.adapter.B.cast<T>();
  Matrix<T> ba(d, k);
  kernels::matmul_nn_acc(b.data(), L.adapter.A.data(), ba.data(), d, r, k);
  const auto s = static_cast<T>(L.adapter.scale());
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] += s * ba.data()[i];
  return w;
}

// Everything a pass needs besides activations.
template <typename T>
struct Net {
  const ModelParams& P;
  const MergedWeights<T>& W;
  backprop::Gradients<T>* grads;

  const Matrix<T>& w(const LoraLinear& L) const { return W.w[static_cast<std::size_t>(L.id)]; }
  const Matrix<T>& wt(const LoraLinear& L) const { return W.wt[static_cast<std::size_t>(L.id)]; }
};

template <typename T>
struct LinCache {
  const Matrix<T>* x = nullptr;
};

template <typename T>
void lin_fwd(const Net<T>& net, const LoraLinear& L, const Matrix<T>& x, Matrix<T>& y,
             LinCache<T>& c) {
  const Matrix<T>& w = net.w(L);
  const std::size_t n = x.rows();
  const std::size_t k = w.cols();
  const std::size_t d = w.rows();
  if (x.cols() != k) fail(ErrorCode::kShapeMismatch, L.name + ": input width mismatch");
  y.resize(n, d);
  kernels::matmul_nn(x.data(), net.wt(L).data(), y.data(), n, k, d);
  c.x = &x;
}

template <typename T>
void lin_bwd(const Net<T>& net, const LoraLinear& L, const LinCache<T>& c, const Matrix<T>& dy,
             Matrix<T>* dx) {
  const Matrix<T>& w = net.w(L);
  const std::size_t n = dy.rows();
  const std::size_t k = w.cols();
  const std::size_t d = w.rows();
  if (dx) kernels::matmul_nn_acc(dy.data(), w.data(), dx->data(), n, d, k);
  if (net.grads && L.adapter.rank > 0) {
    auto& g = net.grads->layers[static_cast<std::size_t>(L.id)];
    kernels::matmul_tn_acc(dy.data(), c.x->data(), g.data(), n, d, k);
  }
}

// Scaled dot-product attention over one head. Rows are addressed with
// explicit strides so heads can live side by side in one matrix.
struct HeadView {
  std::size_t lq, lk, dk, dv;
  std::size_t q_stride, k_stride, v_stride, o_stride;
  bool causal;
};

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, std::size_t stride,
                    std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * stride + c];
  }
}

// Keys and values are transposed so every inner loop runs along the key axis.
template <typename T>
void attend_fwd(const HeadView& h, const T* q, const T* k, const T* v, T* out, T* probs) {
  const T scale = T{1} / std::sqrt(static_cast<T>(h.dk));
  std::vector<T> kt, vt;
  transpose_into(k, h.lk, h.dk, h.k_stride, kt);
  transpose_into(v, h.lk, h.dv, h.v_stride, vt);
  for (std::size_t i = 0; i < h.lq; ++i) {
    T* p = probs + i * h.lk;
    const std::size_t visible = h.causal ? i + 1 : h.lk;
    std::fill(p, p + h.lk, T{});
    const T* qi = q + i * h.q_stride;
    for (std::size_t c = 0; c < h.dk; ++c) kernels::axpy(qi[c], kt.data() + c * h.lk, p, visible);
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < visible; ++j) {
      p[j] *= scale;
      m = std::max(m, p[j]);
    }
    T sum{};
    for (std::size_t j = 0; j < visible; ++j) {
      p[j] = std::exp(p[j] - m);
      sum += p[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < visible; ++j) p[j] *= inv;
    T* o = out + i * h.o_stride;
    for (std::size_t c = 0; c < h.dv; ++c) o[c] = kernels::dot(p, vt.data() + c * h.lk, visible);
  }
}

template <typename T>
void attend_bwd(const HeadView& h, const T* q, const T* k, const T* v, const T* probs,
                const T* dout, T* dq, T* dk, T* dv) {
  const T scale = T{1} / std::sqrt(static_cast<T>(h.dk));
  std::vector<T> kt, vt;
  transpose_into(k, h.lk, h.dk, h.k_stride, kt);
  transpose_into(v, h.lk, h.dv, h.v_stride, vt);
  std::vector<T> dkt(h.dk * h.lk), dvt(h.dv * h.lk), ds(h.lk);
  for (std::size_t i = 0; i < h.lq; ++i) {
    const T* p = probs + i * h.lk;
    const T* go = dout + i * h.o_stride;
    const T* qi = q + i * h.q_stride;
    const std::size_t visible = h.causal ? i + 1 : h.lk;
    std::fill(ds.begin(), ds.begin() + static_cast<std::ptrdiff_t>(visible), T{});
    for (std::size_t c = 0; c < h.dv; ++c) {
      kernels::axpy(go[c], vt.data() + c * h.lk, ds.data(), visible);
      kernels::axpy(go[c], p, dvt.data() + c * h.lk, visible);
    }
    const T dot_pg = kernels::dot(p, ds.data(), visible);
    for (std::size_t j = 0; j < visible; ++j) ds[j] = p[j] * (ds[j] - dot_pg) * scale;
    T* dqi = dq + i * h.q_stride;
    for (std::size_t c = 0; c < h.dk; ++c) {
      dqi[c] += kernels::dot(ds.data(), kt.data() + c * h.lk, visible);
      kernels::axpy(qi[c], ds.data(), dkt.data() + c * h.lk, visible);
    }
  }
  for (std::size_t j = 0; j < h.lk; ++j) {
    for (std::size_t c = 0; c < h.dk; ++c) dk[j * h.k_stride + c] += dkt[c * h.lk + j];
    for (std::size_t c = 0; c < h.dv; ++c) dv[j * h.v_stride + c] += dvt[c * h.lk + j];
  }
}

template <typename T>
struct AttnBlock {
  Matrix<T> xn;
  std::vector<T> inv;
  Matrix<T> q, k, v, ctx, out;
  std::vector<T> probs;
  LinCache<T> cq, ck, cv, co;
};

template <typename T>
struct FfnBlock {
  Matrix<T> xn;
  std::vector<T> inv;
  Matrix<T> h, g, out;
  LinCache<T> c1, c2;
};

template <typename T>
void self_attn_fwd(const Net<T>& net, const LoraLinear& Lq, const LoraLinear& Lk,
                   const LoraLinear& Lv, const LoraLinear& Lo, bool causal, Matrix<T>& x,
                   AttnBlock<T>& b) {
  const auto n_heads = static_cast<std::size_t>(net.P.cfg.n_heads);
  layer_norm_fwd(x, b.xn, b.inv);
  lin_fwd(net, Lq, b.xn, b.q, b.cq);
  lin_fwd(net, Lk, b.xn, b.k, b.ck);
  lin_fwd(net, Lv, b.xn, b.v, b.cv);
  const std::size_t L = x.rows();
  const std::size_t d = x.cols();
  const std::size_t dk = d / n_heads;
  b.ctx.resize(L, d);
  b.probs.assign(n_heads * L * L, T{});
  const HeadView hv{L, L, dk, dk, d, d, d, d, causal};
  for (std::size_t hd = 0; hd < n_heads; ++hd) {
    const std::size_t off = hd * dk;
    attend_fwd(hv, b.q.data() + off, b.k.data() + off, b.v.data() + off, b.ctx.data() + off,
               b.probs.data() + hd * L * L);
  }
  lin_fwd(net, Lo, b.ctx, b.out, b.co);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += b.out.data()[i];
}

template <typename T>
void self_attn_bwd(const Net<T>& net, const LoraLinear& Lq, const LoraLinear& Lk,
                   const LoraLinear& Lv, const LoraLinear& Lo, bool causal, const AttnBlock<T>& b,
                   Matrix<T>& dx) {
  const auto n_heads = static_cast<std::size_t>(net.P.cfg.n_heads);
  const std::size_t L = b.xn.rows();
  const std::size_t d = b.xn.cols();
  const std::size_t dk = d / n_heads;
  Matrix<T> dctx(L, d);
  lin_bwd(net, Lo, b.co, dx, &dctx);
  Matrix<T> dq(L, d), dkm(L, d), dv(L, d);
  const HeadView hv{L, L, dk, dk, d, d, d, d, causal};
  for (std::size_t hd = 0; hd < n_heads; ++hd) {
    const std::size_t off = hd * dk;
    attend_bwd(hv, b.q.data() + off, b.k.data() + off, b.v.data() + off,
               b.probs.data() + hd * L * L, dctx.data() + off, dq.data() + off,
               dkm.data() + off, dv.data() + off);
  }
  Matrix<T> dxn(L, d);
  lin_bwd(net, Lq, b.cq, dq, &dxn);
  lin_bwd(net, Lk, b.ck, dkm, &dxn);
  lin_bwd(net, Lv, b.cv, dv, &dxn);
  layer_norm_bwd(b.xn, b.inv, dxn, dx);
}

// Keys and values depend only on the audio tokens, so they are computed once
// per clip and shared by every sequence decoded against it.
template <typename T>
struct CrossKV {
  Matrix<T> k, v;
  LinCache<T> ck, cv;
  Matrix<T> dk, dv;  // gradients summed over sequences
};

template <typename T>
struct CrossBlock {
  Matrix<T> xn;
  std::vector<T> inv;
  Matrix<T> q, ctx, out;
  std::vector<T> probs;
  LinCache<T> cq, co;
};

template <typename T>
void cross_kv_fwd(const Net<T>& net, const DecoderLayer& D, const Matrix<T>& z, CrossKV<T>& kv) {
  lin_fwd(net, D.ck, z, kv.k, kv.ck);
  lin_fwd(net, D.cv, z, kv.v, kv.cv);
  kv.dk.resize(kv.k.rows(), kv.k.cols());
  kv.dv.resize(kv.v.rows(), kv.v.cols());
}

template <typename T>
void cross_kv_bwd(const Net<T>& net, const DecoderLayer& D, const CrossKV<T>& kv, Matrix<T>& dz) {
  lin_bwd(net, D.ck, kv.ck, kv.dk, &dz);
  lin_bwd(net, D.cv, kv.cv, kv.dv, &dz);
}

template <typename T>
void cross_fwd(const Net<T>& net, const DecoderLayer& D, const CrossKV<T>& kv, Matrix<T>& x,
               CrossBlock<T>& b) {
  layer_norm_fwd(x, b.xn, b.inv);
  lin_fwd(net, D.cq, b.xn, b.q, b.cq);
  const std::size_t L = x.rows();
  const std::size_t La = kv.k.rows();
  const std::size_t dk = b.q.cols();
  const std::size_t dv = kv.v.cols();
  b.ctx.resize(L, dv);
  b.probs.assign(L * La, T{});
  const HeadView hv{L, La, dk, dv, dk, dk, dv, dv, false};
  attend_fwd(hv, b.q.data(), kv.k.data(), kv.v.data(), b.ctx.data(), b.probs.data());
  lin_fwd(net, D.co, b.ctx, b.out, b.co);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += b.out.data()[i];
}

template <typename T>
void cross_bwd(const Net<T>& net, const DecoderLayer& D, const CrossBlock<T>& b, CrossKV<T>& kv,
               Matrix<T>& dx) {
  const std::size_t L = b.xn.rows();
  const std::size_t La = kv.k.rows();
  const std::size_t dk = b.q.cols();
  const std::size_t dv = kv.v.cols();
  Matrix<T> dctx(L, dv);
  lin_bwd(net, D.co, b.co, dx, &dctx);
  Matrix<T> dq(L, dk);
  const HeadView hv{L, La, dk, dv, dk, dk, dv, dv, false};
  attend_bwd(hv, b.q.data(), kv.k.data(), kv.v.data(), b.probs.data(), dctx.data(), dq.data(),
             kv.dk.data(), kv.dv.data());
  Matrix<T> dxn(L, b.xn.cols());
  lin_bwd(net, D.cq, b.cq, dq, &dxn);
  layer_norm_bwd(b.xn, b.inv, dxn, dx);
}

template <typename T>
void ffn_fwd(const Net<T>& net, const LoraLinear& L1, const LoraLinear& L2, Matrix<T>& x,
             FfnBlock<T>& b) {
  layer_norm_fwd(x, b.xn, b.inv);
  lin_fwd(net, L1, b.xn, b.h, b.c1);
  b.g.resize(b.h.rows(), b.h.cols());
  for (std::size_t i = 0; i < b.h.size(); ++i) b.g.data()[i] = gelu(b.h.data()[i]);
  lin_fwd(net, L2, b.g, b.out, b.c2);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += b.out.data()[i];
}

template <typename T>
void ffn_bwd(const Net<T>& net, const LoraLinear& L1, const LoraLinear& L2, const FfnBlock<T>& b,
             Matrix<T>& dx) {
  Matrix<T> dg(b.g.rows(), b.g.cols());
  lin_bwd(net, L2, b.c2, dx, &dg);
  for (std::size_t i = 0; i < dg.size(); ++i) dg.data()[i] *= gelu_grad(b.h.data()[i]);
  Matrix<T> dxn(b.xn.rows(), b.xn.cols());
  lin_bwd(net, L1, b.c1, dg, &dxn);
  layer_norm_bwd(b.xn, b.inv, dxn, dx);
}

template <typename T>
struct EncoderPass {
  Matrix<T> mel;
  Matrix<T> h0, h0n;
  std::vector<T> inv0;
  LinCache<T> cin;
  std::vector<AttnBlock<T>> attn;
  std::vector<FfnBlock<T>> ffn;
  Matrix<T> fn;
  std::vector<T> invf;
  Matrix<T> z;
};

template <typename T>
void encoder_fwd(const Net<T>& net, const MelSpec& mel, EncoderPass<T>& e) {
  const auto& P = net.P;
  const auto& cfg = P.cfg;
  if (mel.rows() == 0) fail(ErrorCode::kTooShort, "mel spectrogram has no frames");
  if (mel.cols() != static_cast<std::size_t>(cfg.mel_bins)) {
    fail(ErrorCode::kShapeMismatch, "mel bin count differs from the model config");
  }
  e.mel = mel.cast<T>();
  lin_fwd(net, P.in_proj, e.mel, e.h0, e.cin);
  layer_norm_fwd(e.h0, e.h0n, e.inv0);
  Matrix<T> x = e.h0n;
  add_positions(x);
  e.attn.resize(P.encoder.size());
  e.ffn.resize(P.encoder.size());
  for (std::size_t l = 0; l < P.encoder.size(); ++l) {
    const auto& L = P.encoder[l];
    self_attn_fwd(net, L.q, L.k, L.v, L.o, false, x, e.attn[l]);
    ffn_fwd(net, L.ff1, L.ff2, x, e.ffn[l]);
  }
  layer_norm_fwd(x, e.fn, e.invf);
  const std::size_t frames = e.fn.rows();
  const std::size_t d = e.fn.cols();
  const auto ds = static_cast<std::size_t>(cfg.audio_downsample);
  const std::size_t la = (frames + ds - 1) / ds;
  e.z.resize(la, d);
  for (std::size_t a = 0; a < la; ++a) {
    const std::size_t lo = a * ds;
    const std::size_t hi = std::min(frames, lo + ds);
    T* zr = e.z.data() + a * d;
    for (std::size_t f = lo; f < hi; ++f) kernels::axpy(T{1}, e.fn.data() + f * d, zr, d);
    const T inv = T{1} / static_cast<T>(hi - lo);
    for (std::size_t j = 0; j < d; ++j) zr[j] *= inv;
  }
}

template <typename T>
void encoder_bwd(const Net<T>& net, const EncoderPass<T>& e, const Matrix<T>& dz) {
  const auto& P = net.P;
  const std::size_t frames = e.fn.rows();
  const std::size_t d = e.fn.cols();
  const auto ds = static_cast<std::size_t>(P.cfg.audio_downsample);
  Matrix<T> dfn(frames, d);
  for (std::size_t a = 0; a < dz.rows(); ++a) {
    const std::size_t lo = a * ds;
    const std::size_t hi = std::min(frames, lo + ds);
    const T inv = T{1} / static_cast<T>(hi - lo);
    for (std::size_t f = lo; f < hi; ++f) {
      kernels::axpy(inv, dz.data() + a * d, dfn.data() + f * d, d);
    }
  }
  Matrix<T> dx(frames, d);
  layer_norm_bwd(e.fn, e.invf, dfn, dx);
  for (std::size_t l = P.encoder.size(); l-- > 0;) {
    const auto& L = P.encoder[l];
    ffn_bwd(net, L.ff1, L.ff2, e.ffn[l], dx);
    self_attn_bwd(net, L.q, L.k, L.v, L.o, false, e.attn[l], dx);
  }
  Matrix<T> dh0(frames, d);
  layer_norm_bwd(e.h0n, e.inv0, dx, dh0);
  lin_bwd(net, P.in_proj, e.cin, dh0, static_cast<Matrix<T>*>(nullptr));
}

template <typename T>
struct DecoderPass {
  std::vector<std::size_t> audio_rows;  // sequence positions of AUDIO slots
  std::vector<AttnBlock<T>> self;
  std::vector<CrossBlock<T>> cross;
  std::vector<FfnBlock<T>> ffn;
  Matrix<T> hf;
  std::vector<T> invf;
  Matrix<T> rows;  // final hidden states at requested positions
  LinCache<T> chead;
  Matrix<T> logits;
};

template <typename T>
void decoder_fwd(const Net<T>& net, const TokenSeq& tokens, const Matrix<T>& z,
                 const std::vector<CrossKV<T>>& kv, const std::vector<int>& positions,
                 DecoderPass<T>& p) {
  const auto& P = net.P;
  const auto& cfg = P.cfg;
  const std::size_t L = tokens.size();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  if (L == 0) fail(ErrorCode::kInvalidLayout, "empty decoder sequence");
  if (L > static_cast<std::size_t>(cfg.max_seq)) {
    fail(ErrorCode::kInvalidLayout, "sequence longer than max_seq");
  }
  p.audio_rows.clear();
  for (std::size_t t = 0; t < L; ++t) {
    const TokenId id = tokens[t];
    if (id < 0 || id >= cfg.vocab_size) fail(ErrorCode::kInvalidArgument, "token id out of range");
    if (id == vocab::kAudio) p.audio_rows.push_back(t);
  }
  if (p.audio_rows.size() != z.rows()) {
    fail(ErrorCode::kSlotMismatch, std::to_string(p.audio_rows.size()) + " AUDIO slots for " +
                                       std::to_string(z.rows()) + " audio tokens");
  }
  Matrix<T> x(L, d);
  std::size_t next_audio = 0;
  for (std::size_t t = 0; t < L; ++t) {
    T* xr = x.data() + t * d;
    if (tokens[t] == vocab::kAudio) {
      std::copy_n(z.data() + next_audio++ * d, d, xr);
    } else {
      const float* er = P.token_embedding.data() + static_cast<std::size_t>(tokens[t]) * d;
      for (std::size_t j = 0; j < d; ++j) xr[j] = static_cast<T>(er[j]);
    }
  }
  add_positions(x);
  p.self.resize(P.decoder.size());
  p.cross.resize(P.decoder.size());
  p.ffn.resize(P.decoder.size());
  for (std::size_t l = 0; l < P.decoder.size(); ++l) {
    const auto& D = P.decoder[l];
    self_attn_fwd(net, D.q, D.k, D.v, D.o, true, x, p.self[l]);
    cross_fwd(net, D, kv[l], x, p.cross[l]);
    ffn_fwd(net, D.ff1, D.ff2, x, p.ffn[l]);
  }
  layer_norm_fwd(x, p.hf, p.invf);
  p.rows.resize(positions.size(), d);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto pos = static_cast<std::size_t>(positions[i]);
    if (pos >= L) fail(ErrorCode::kInvalidArgument, "logit position out of range");
    std::copy_n(p.hf.data() + pos * d, d, p.rows.data() + i * d);
  }
  lin_fwd(net, P.lm_head, p.rows, p.logits, p.chead);
}

// dlogits is the gradient w.r.t. p.logits; audio-slot gradients go to dz and
// cross-attention key/value gradients to kv.
template <typename T>
void decoder_bwd(const Net<T>& net, const DecoderPass<T>& p, const std::vector<int>& positions,
                 const Matrix<T>& dlogits, std::vector<CrossKV<T>>& kv, Matrix<T>& dz) {
  const auto& P = net.P;
  const std::size_t L = p.hf.rows();
  const std::size_t d = p.hf.cols();
  Matrix<T> drows(positions.size(), d);
  lin_bwd(net, P.lm_head, p.chead, dlogits, &drows);
  Matrix<T> dhf(L, d);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    kernels::axpy(T{1}, drows.data() + i * d,
                  dhf.data() + static_cast<std::size_t>(positions[i]) * d, d);
  }
  Matrix<T> dx(L, d);
  layer_norm_bwd(p.hf, p.invf, dhf, dx);
  for (std::size_t l = P.decoder.size(); l-- > 0;) {
    const auto& D = P.decoder[l];
    ffn_bwd(net, D.ff1, D.ff2, p.ffn[l], dx);
    cross_bwd(net, D, p.cross[l], kv[l], dx);
    self_attn_bwd(net, D.q, D.k, D.v, D.o, true, p.self[l], dx);
  }
  for (std::size_t a = 0; a < p.audio_rows.size(); ++a) {
    kernels::axpy(T{1}, dx.data() + p.audio_rows[a] * d, dz.data() + a * d, d);
  }
}

template <typename T>
std::vector<CrossKV<T>> cross_kv_all(const Net<T>& net, const Matrix<T>& z) {
  std::vector<CrossKV<T>> kv(net.P.decoder.size());
  for (std::size_t l = 0; l < kv.size(); ++l) cross_kv_fwd(net, net.P.decoder[l], z, kv[l]);
  return kv;
}

}  // namespace

template <typename T>
MergedWeights<T> merge_adapters(const ModelParams& params) {
  MergedWeights<T> m;
  const auto ls = params.linears();
  m.w.resize(ls.size());
  m.wt.resize(ls.size());
  for (const auto* l : ls) {
    const auto id = static_cast<std::size_t>(l->id);
    m.w[id] = merge_one<T>(*l);
    const Matrix<T>& w = m.w[id];
    Matrix<T>& t = m.wt[id];
    t.resize(w.cols(), w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) t(j, i) = w(i, j);
    }
  }
  return m;
}

template MergedWeights<float> merge_adapters(const ModelParams&);
template MergedWeights<double> merge_adapters(const ModelParams&);

namespace net {

template <typename T>
CrossAttentionResult<T> cross_attention(const Matrix<T>& z_text, const Matrix<T>& z_audio,
                                        const LoraLinear& wq, const LoraLinear& wk,
                                        const LoraLinear& wv) {
  if (z_text.cols() != z_audio.cols() || wq.out_dim() != wk.out_dim() || z_audio.rows() == 0 ||
      wq.in_dim() != z_text.cols() || wk.in_dim() != z_audio.cols() ||
      wv.in_dim() != z_audio.cols()) {
    fail(ErrorCode::kShapeMismatch, "cross_attention operand shapes do not conform");
  }
  const auto project = [](const Matrix<T>& x, const LoraLinear& L) {
    const Matrix<T> w = merge_one<T>(L);
    Matrix<T> y;
    kernels::matmul_nt(x, w, y);
    return y;
  };
  const Matrix<T> q = project(z_text, wq);
  const Matrix<T> k = project(z_audio, wk);
  const Matrix<T> v = project(z_audio, wv);
  CrossAttentionResult<T> out;
  out.weights.resize(z_text.rows(), z_audio.rows());
  out.context.resize(z_text.rows(), v.cols());
  const HeadView hv{z_text.rows(), z_audio.rows(), q.cols(), v.cols(),
                    q.cols(),      k.cols(),       v.cols(), v.cols(), false};
  attend_fwd(hv, q.data(), k.data(), v.data(), out.context.data(), out.weights.data());
  return out;
}

template CrossAttentionResult<float> cross_attention(const Matrix<float>&, const Matrix<float>&,
                                                     const LoraLinear&, const LoraLinear&,
                                                     const LoraLinear&);
template CrossAttentionResult<double> cross_attention(const Matrix<double>&,
                                                      const Matrix<double>&, const LoraLinear&,
                                                      const LoraLinear&, const LoraLinear&);

AudioEmbedding encode_mel(const MelSpec& mel, const ModelParams& params,
                          const MergedWeights<float>& weights) {
  const Net<float> net{params, weights, nullptr};
  EncoderPass<float> e;
  encoder_fwd(net, mel, e);
  return std::move(e.z);
}

AudioEmbedding encode_mel(const MelSpec& mel, const ModelParams& params) {
  return encode_mel(mel, params, merge_adapters<float>(params));
}

AudioEmbedding encode_audio(const WavClip& clip, const ModelParams& params) {
  return encode_mel(mel_frontend(clip, params.cfg), params);
}

Matrix<float> decoder_logits(const ModelParams& params, const MergedWeights<float>& weights,
                             const TokenSeq& tokens, const AudioEmbedding& audio,
                             const std::vector<int>& positions) {
  const Net<float> net{params, weights, nullptr};
  if (audio.cols() != static_cast<std::size_t>(params.cfg.d_model)) {
    fail(ErrorCode::kShapeMismatch, "audio embedding width differs from d_model");
  }
  const auto kv = cross_kv_all(net, audio);
  DecoderPass<float> p;
  decoder_fwd(net, tokens, audio, kv, positions, p);
  return std::move(p.logits);
}

Matrix<float> decoder_logits(const ModelParams& params, const TokenSeq& tokens,
                             const AudioEmbedding& audio, const std::vector<int>& positions) {
  return decoder_logits(params, merge_adapters<float>(params), tokens, audio, positions);
}

std::vector<double> forward_next_token(const ModelParams& params,
                                       const MergedWeights<float>& weights,
                                       const TokenSeq& prompt, const AudioEmbedding& audio) {
  if (prompt.empty()) fail(ErrorCode::kInvalidLayout, "empty prompt");
  const auto logits =
      decoder_logits(params, weights, prompt, audio, {static_cast<int>(prompt.size()) - 1});
  std::vector<double> row(logits.row(0).begin(), logits.row(0).end());
  return softmax(row);
}

std::vector<double> forward_next_token(const ModelParams& params, const TokenSeq& prompt,
                                       const AudioEmbedding& audio) {
  return forward_next_token(params, merge_adapters<float>(params), prompt, audio);
}

}  // namespace net

namespace backprop {

template <typename T>
std::size_t AdapterGradients<T>::size() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.dA.size() + l.dB.size();
  return n;
}

template <typename T>
Gradients<T> Gradients<T>::zeros_like(const ModelParams& params) {
  Gradients g;
  const auto ls = params.linears();
  g.layers.resize(ls.size());
  for (const auto* l : ls) {
    if (l->adapter.rank > 0) {
      g.layers[static_cast<std::size_t>(l->id)].resize(l->out_dim(), l->in_dim());
    }
  }
  return g;
}

template <typename T>
void Gradients<T>::clear() {
  for (auto& l : layers) l.fill(T{});
}

template <typename T>
void Gradients<T>::add(const Gradients& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    kernels::axpy(T{1}, other.layers[i].data(), layers[i].data(), layers[i].size());
  }
}

template <typename T>
std::size_t Gradients<T>::size() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

template <typename T>
AdapterGradients<T> to_adapter_gradients(const ModelParams& params, const Gradients<T>& dense) {
  AdapterGradients<T> out;
  const auto ls = params.linears();
  out.layers.resize(ls.size());
  for (const auto* l : ls) {
    auto& g = out.layers[static_cast<std::size_t>(l->id)];
    const auto r = static_cast<std::size_t>(l->adapter.rank);
    if (r == 0) continue;
    const std::size_t d = l->out_dim();
    const std::size_t k = l->in_dim();
    const Matrix<T>& G = dense.layers[static_cast<std::size_t>(l->id)];
    const auto s = static_cast<T>(l->adapter.scale());
    g.dB.resize(d, r);
    kernels::matmul_nt(G.data(), l->adapter.A.data(), g.dB.data(), d, k, r);
    const Matrix<T> b = l->adapter.B.cast<T>();
    g.dA.resize(r, k);
    kernels::matmul_tn_acc(b.data(), G.data(), g.dA.data(), d, r, k);
    for (auto& v : g.dB.values()) v *= s;
    for (auto& v : g.dA.values()) v *= s;
  }
  return out;
}

std::size_t target_count(const Example& example) {
  std::size_t n = 0;
  for (const auto& p : example.passes) n += p.targets.size();
  return n;
}

void Example::add_sequence(const TokenSeq& tokens, int target_begin) {
  const auto n = static_cast<int>(tokens.size());
  if (target_begin < 1 || target_begin >= n) {
    fail(ErrorCode::kEmptyBatch, "sequence has no target tokens");
  }
  std::vector<TargetToken> targets;
  for (int t = target_begin - 1; t < n - 1; ++t) {
    targets.push_back({t, tokens[static_cast<std::size_t>(t) + 1]});
  }
  ++sequences;
  // Logits at position t depend on tokens[0..t] only, so a sequence whose
  // scored prefix matches an existing pass can share that pass.
  const auto same_prefix = [](const TokenSeq& a, const TokenSeq& b, std::size_t len) {
    return a.size() >= len && b.size() >= len && std::equal(a.begin(), a.begin() + len, b.begin());
  };
  for (auto& pass : passes) {
    std::size_t old_need = 0;
    for (const auto& t : pass.targets) old_need = std::max(old_need, static_cast<std::size_t>(t.position) + 1);
    const auto new_need = static_cast<std::size_t>(n - 1);
    if (tokens.size() >= pass.tokens.size() && same_prefix(tokens, pass.tokens, old_need)) {
      pass.tokens = tokens;
    } else if (!same_prefix(tokens, pass.tokens, new_need)) {
      continue;
    }
    pass.targets.insert(pass.targets.end(), targets.begin(), targets.end());
    return;
  }
  passes.push_back({tokens, std::move(targets)});
}

template <typename T>
double example_loss(const ModelParams& params, const MergedWeights<T>& weights,
                    const Example& example, Gradients<T>* grads) {
  if (!example.mel) fail(ErrorCode::kInvalidArgument, "example has no features");
  if (example.passes.empty()) fail(ErrorCode::kEmptyBatch, "example has no sequences");
  const Net<T> net{params, weights, grads};
  EncoderPass<T> enc;
  encoder_fwd(net, *example.mel, enc);
  auto kv = cross_kv_all(net, enc.z);
  Matrix<T> dz(enc.z.rows(), enc.z.cols());
  double total = 0.0;
  DecoderPass<T> dec;
  for (const auto& pass : example.passes) {
    if (pass.targets.empty()) fail(ErrorCode::kEmptyBatch, "decoder pass has no targets");
    std::vector<int> pos;
    for (const auto& t : pass.targets) pos.push_back(t.position);
    decoder_fwd(net, pass.tokens, enc.z, kv, pos, dec);
    const std::size_t V = dec.logits.cols();
    Matrix<T> dlogits(pos.size(), V);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const T* lg = dec.logits.data() + i * V;
      const auto target = static_cast<std::size_t>(pass.targets[i].token);
      if (target >= V) fail(ErrorCode::kInvalidArgument, "target token out of range");
      T m = lg[0];
      for (std::size_t c = 1; c < V; ++c) m = std::max(m, lg[c]);
      T sum{};
      T* g = dlogits.data() + i * V;
      for (std::size_t c = 0; c < V; ++c) {
        g[c] = std::exp(lg[c] - m);
        sum += g[c];
      }
      total += static_cast<double>(m + std::log(sum) - lg[target]);
      const T inv = T{1} / sum;
      for (std::size_t c = 0; c < V; ++c) g[c] *= inv;
      g[target] -= T{1};
    }
    if (grads) decoder_bwd(net, dec, pos, dlogits, kv, dz);
  }
  if (!std::isfinite(total)) fail(ErrorCode::kNonFiniteLoss, "non-finite example loss");
  if (grads) {
    for (std::size_t l = 0; l < kv.size(); ++l) cross_kv_bwd(net, params.decoder[l], kv[l], dz);
    encoder_bwd(net, enc, dz);
  }
  return total;
}

template struct AdapterGradients<float>;
template struct AdapterGradients<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template AdapterGradients<float> to_adapter_gradients(const ModelParams&, const Gradients<float>&);
template AdapterGradients<double> to_adapter_gradients(const ModelParams&,
                                                       const Gradients<double>&);
template double example_loss<float>(const ModelParams&, const MergedWeights<float>&,
                                    const Example&, Gradients<float>*);
template double example_loss<double>(const ModelParams&, const MergedWeights<double>&,
                                     const Example&, Gradients<double>*);

}  // namespace backprop
}  // namespace vibrodiag
