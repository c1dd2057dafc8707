// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Hybrid stack of linear attention (L), sliding window (S) and BaseConv (C)
// mixers with pre-norm residuals, plus a greedy recurrent decoder and an Adam
// trainer for MQAR.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "basedlab/baseconv.hpp"
#include "basedlab/errors.hpp"
#include "basedlab/feature_maps.hpp"
#include "basedlab/linear_attention.hpp"
#include "basedlab/mqar.hpp"
#include "basedlab/rng.hpp"
#include "basedlab/sliding_window.hpp"
#include "basedlab/tensor.hpp"

namespace basedlab {

struct ModelConfig {
  int vocab = 65;
  std::size_t d_model = 64;
  std::size_t heads = 1;
  std::size_t d_prime = 16;
  std::size_t head_dim = 0;  // 0: d_model / heads
  std::size_t window = 64;
  std::string layer_pattern = "CLCS";
  std::string feature_map = "taylor";
  bool decay = false;
  bool rotary = true;
  std::size_t conv_taps = 3;
  std::size_t conv_expansion = 4;
  bool tie_embeddings = false;
  bool mlp = false;
  std::size_t mlp_expansion = 2;
  std::string norm = "rms";
  std::string scalar = "f64";
  double init_std = 0.02;
  std::uint64_t seed = 0;

  std::size_t resolved_head_dim() const { return head_dim ? head_dim : d_model / heads; }
  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.vocab < 1) throw ConfigError("vocab must be >= 1", "model.vocab");
  if (c.d_model < 1) throw ConfigError("d_model must be >= 1", "model.d_model");
  if (c.heads < 1) throw ConfigError("heads must be >= 1", "model.heads");
  if (c.head_dim == 0 && c.d_model % c.heads) throw ConfigError("d_model not divisible by heads", "model.heads");
  if (c.d_prime < 1) throw ConfigError("d_prime must be >= 1", "model.d_prime");
  if (c.window < 1) throw ConfigError("window must be >= 1", "model.window");
  if (c.layer_pattern.empty()) throw ConfigError("layer_pattern must be nonempty", "model.layer_pattern");
  for (char ch : c.layer_pattern) {
    if (ch != 'L' && ch != 'S' && ch != 'C') {
      throw ConfigError(std::string("unknown layer kind '") + ch + "' (expected L, S or C)", "model.layer_pattern");
    }
  }
  if (c.conv_taps < 1) throw ConfigError("conv_taps must be >= 1", "model.conv_taps");
  if (c.conv_expansion < 1) throw ConfigError("conv_expansion must be >= 1", "model.conv_expansion");
  if (c.mlp_expansion < 1) throw ConfigError("mlp_expansion must be >= 1", "model.mlp_expansion");
  if (c.norm != "rms") throw ConfigError("only 'rms' normalization is supported", "model.norm");
  if (c.scalar != "f64" && c.scalar != "f32") throw ConfigError("scalar must be f64 or f32", "model.scalar");
  if (c.rotary && c.layer_pattern.find('S') != std::string::npos && c.resolved_head_dim() % 2) {
    throw ConfigError("rotary sliding-window layers need an even head dimension", "model.head_dim");
  }
  feature_map_kind_from_string(c.feature_map);
}

// Cycles "C L C S", skipping kinds whose count is exhausted.
inline std::string interleave_pattern(std::size_t n_linear, std::size_t n_window, std::size_t n_conv) {
  std::string out;
  std::size_t left[3] = {n_conv, n_linear, n_window};
  const char cycle[4] = {'C', 'L', 'C', 'S'};
  const int slot[4] = {0, 1, 0, 2};
  while (left[0] + left[1] + left[2]) {
    for (int i = 0; i < 4; ++i) {
      if (left[slot[i]]) {
        out += cycle[i];
        --left[slot[i]];
      }
    }
  }
  return out;
}

struct LayerCounts {
  std::size_t linear = 0, window = 0, conv = 0;
};

inline LayerCounts layer_counts(const std::string& pattern) {
  LayerCounts c;
  for (char ch : pattern) {
    c.linear += ch == 'L';
    c.window += ch == 'S';
    c.conv += ch == 'C';
  }
  return c;
}

template <typename T = double>
struct MlpParams {
  Tensor<T> w_gate, w_up;  // d x m
  Tensor<T> w_down;        // m x d
};

template <typename T = double>
struct Layer {
  char kind = 'C';
  Tensor<T> norm;
  LinAttnParams<T> lin;
  SwaParams<T> swa;
  BaseConvGatedParams<T> conv;
  bool has_mlp = false;
  Tensor<T> mlp_norm;
  MlpParams<T> mlp;
};

template <typename T>
Tensor<T> swiglu(const MlpParams<T>& p, const Tensor<T>& x) {
  return matmul(mul(silu(matmul(x, p.w_gate)), matmul(x, p.w_up)), p.w_down);
}

template <typename T = double>
class HybridModel {
 public:
  using NamedTensor = std::pair<std::string, Tensor<T>>;

  ModelConfig config;
  Tensor<T> embed;  // vocab x d_model
  std::vector<Layer<T>> layers;
  Tensor<T> final_norm;
  Tensor<T> head;  // d_model x vocab; undefined when tied

  // Parameters in a fixed order. Tensors alias the model's storage.
  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> ps{{"embed", embed}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string pre = "layers." + std::to_string(i) + ".";
      ps.push_back({pre + "norm", l.norm});
      switch (l.kind) {
        case 'L':
          ps.push_back({pre + "lin.wq", l.lin.wq});
          ps.push_back({pre + "lin.wk", l.lin.wk});
          ps.push_back({pre + "lin.wv", l.lin.wv});
          ps.push_back({pre + "lin.wo", l.lin.wo});
          if (l.lin.decay) ps.push_back({pre + "lin.mix", l.lin.decay->mix});
          break;
        case 'S':
          ps.push_back({pre + "swa.wq", l.swa.wq});
          ps.push_back({pre + "swa.wk", l.swa.wk});
          ps.push_back({pre + "swa.wv", l.swa.wv});
          ps.push_back({pre + "swa.wo", l.swa.wo});
          break;
        default:
          ps.push_back({pre + "conv.w1", l.conv.w1});
          ps.push_back({pre + "conv.w2", l.conv.w2});
          ps.push_back({pre + "conv.w3", l.conv.w3});
          ps.push_back({pre + "conv.b1", l.conv.b1});
          ps.push_back({pre + "conv.b2", l.conv.b2});
          ps.push_back({pre + "conv.b3", l.conv.b3});
          ps.push_back({pre + "conv.filter", l.conv.filter});
          break;
      }
      if (l.has_mlp) {
        ps.push_back({pre + "mlp_norm", l.mlp_norm});
        ps.push_back({pre + "mlp.w_gate", l.mlp.w_gate});
        ps.push_back({pre + "mlp.w_up", l.mlp.w_up});
        ps.push_back({pre + "mlp.w_down", l.mlp.w_down});
      }
    }
    ps.push_back({"final_norm", final_norm});
    if (!config.tie_embeddings) ps.push_back({"head", head});
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.size();
    return n;
  }

  Tensor<T> mix(const Layer<T>& l, const Tensor<T>& h, std::size_t seq_len) const {
    switch (l.kind) {
      case 'L': return quadratic_forward(l.lin, h, seq_len);
      case 'S': return swa_forward(l.swa, h, seq_len);
      default: return forward_gated(l.conv, h, seq_len);
    }
  }

  // tokens: stacked sequences of length seq_len (0 = one sequence). Returns
  // logits [rows x vocab].
  Tensor<T> forward(std::span<const int> tokens, std::size_t seq_len = 0) const {
    if (tokens.empty()) throw InputError("forward: empty token sequence");
    if (seq_len == 0) seq_len = tokens.size();
    Tensor<T> x = embedding(embed, tokens);
    for (const auto& l : layers) {
      x = add(x, mix(l, rms_norm(x, l.norm), seq_len));
      if (l.has_mlp) x = add(x, swiglu(l.mlp, rms_norm(x, l.mlp_norm)));
    }
    x = rms_norm(x, final_norm);
    return matmul(x, config.tie_embeddings ? transpose(embed) : head);
  }
};

template <typename T = double>
HybridModel<T> build(const ModelConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  HybridModel<T> m;
  m.config = cfg;
  const std::size_t d = cfg.d_model, hd = cfg.resolved_head_dim();
  const double sd = cfg.init_std;
  m.embed = rng.normal_tensor<T>({static_cast<std::size_t>(cfg.vocab), d}, sd);
  const auto kind = feature_map_kind_from_string(cfg.feature_map);
  for (char ch : cfg.layer_pattern) {
    Layer<T> l;
    l.kind = ch;
    l.norm = Tensor<T>::full({d}, T(1));
    if (ch == 'L') {
      l.lin = init_linear_attention<T>(d, cfg.heads, cfg.d_prime, hd, kind, cfg.decay, rng, sd);
    } else if (ch == 'S') {
      l.swa = init_sliding_window<T>(d, cfg.heads, hd, cfg.window, cfg.rotary, rng, sd);
    } else {
      l.conv = init_baseconv<T>(d, cfg.conv_expansion, cfg.conv_taps, rng, sd);
    }
    if (cfg.mlp) {
      const std::size_t mw = cfg.mlp_expansion * d;
      l.has_mlp = true;
      l.mlp_norm = Tensor<T>::full({d}, T(1));
      l.mlp.w_gate = rng.normal_tensor<T>({d, mw}, sd);
      l.mlp.w_up = rng.normal_tensor<T>({d, mw}, sd);
      l.mlp.w_down = rng.normal_tensor<T>({mw, d}, sd);
    }
    m.layers.push_back(std::move(l));
  }
  m.final_norm = Tensor<T>::full({d}, T(1));
  if (!cfg.tie_embeddings) m.head = rng.normal_tensor<T>({d, static_cast<std::size_t>(cfg.vocab)}, sd);
  return m;
}

// ---------------------------------------------------------------------------
// Recurrent decoding

namespace detail {

template <typename T>
std::vector<T> rms_row(std::span<const T> x, const Tensor<T>& w, T eps = T(1e-6)) {
  const std::size_t n = x.size();
  T ms = 0;
  for (T v : x) ms += v * v;
  const T inv = T(1) / std::sqrt(ms / static_cast<T>(n) + eps);
  std::vector<T> y(n);
  for (std::size_t j = 0; j < n; ++j) y[j] = x[j] * inv * w[j];
  return y;
}

}  // namespace detail

// Constant-memory per-token inference: a LinAttnState per linear-attention
// head, a WindowCache per sliding-window layer and a tail buffer per BaseConv.
template <typename T = double>
class HybridDecoder {
 public:
  explicit HybridDecoder(const HybridModel<T>& m, FeatureLayout layout = FeatureLayout::Packed) : model_(&m) {
    for (const auto& l : m.layers) {
      Slot s;
      if (l.kind == 'L') s.lin = LinAttnDecoder<T>(l.lin, layout);
      if (l.kind == 'S') s.cache = WindowCache<T>(l.swa.heads, l.swa.head_dim, l.swa.window);
      if (l.kind == 'C') s.conv = BaseConvDecoder<T>(l.conv);
      slots_.push_back(std::move(s));
    }
  }

  // Feeds one token; returns its next-token logits.
  std::vector<T> step(int token) {
    const auto& m = *model_;
    const std::size_t d = m.config.d_model;
    if (token < 0 || token >= m.config.vocab) {
      throw InputError("token id " + std::to_string(token) + " outside vocabulary");
    }
    std::vector<T> x(m.embed.data().begin() + token * d, m.embed.data().begin() + (token + 1) * d);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const auto& l = m.layers[i];
      auto h = detail::rms_row<T>(x, l.norm);
      std::vector<T> y;
      if (l.kind == 'L') y = slots_[i].lin.step(h);
      if (l.kind == 'S') y = decode_step<T>(l.swa, slots_[i].cache, h);
      if (l.kind == 'C') y = slots_[i].conv.step(h);
      for (std::size_t c = 0; c < d; ++c) x[c] += y[c];
      if (l.has_mlp) {
        auto hm = detail::rms_row<T>(x, l.mlp_norm);
        auto g = detail::vecmat<T>(hm, l.mlp.w_gate), up = detail::vecmat<T>(hm, l.mlp.w_up);
        for (std::size_t c = 0; c < g.size(); ++c) g[c] = g[c] / (T(1) + std::exp(-g[c])) * up[c];
        auto dn = detail::vecmat<T>(g, l.mlp.w_down);
        for (std::size_t c = 0; c < d; ++c) x[c] += dn[c];
      }
    }
    auto hf = detail::rms_row<T>(x, m.final_norm);
    if (!m.config.tie_embeddings) return detail::vecmat<T>(hf, m.head);
    const std::size_t V = static_cast<std::size_t>(m.config.vocab);
    std::vector<T> logits(V, T(0));
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t c = 0; c < d; ++c) logits[v] += hf[c] * m.embed[v * d + c];
    return logits;
  }

  // Scalars held across steps by every layer's recurrent state.
  std::size_t state_scalar_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const char k = model_->layers[i].kind;
      if (k == 'L') n += slots_[i].lin.scalar_count();
      if (k == 'S') n += slots_[i].cache.scalar_count();
      if (k == 'C') n += slots_[i].conv.scalar_count();
    }
    return n;
  }

 private:
  struct Slot {
    LinAttnDecoder<T> lin;
    WindowCache<T> cache;
    BaseConvDecoder<T> conv;
  };
  const HybridModel<T>* model_;
  std::vector<Slot> slots_;
};

template <typename T = double>
struct DecodeResult {
  std::vector<int> tokens;           // prefix followed by the n generated tokens
  std::vector<std::vector<T>> logits;  // one row per fed token
  std::size_t state_scalars = 0;
};

// Greedy continuation; ties resolve to the lowest token id. Every generated
// token is also fed back, so logits has prefix.size() + n rows.
template <typename T>
DecodeResult<T> decode(const HybridModel<T>& m, std::span<const int> prefix, std::size_t n) {
  if (prefix.empty()) throw InputError("decode: prefix must be nonempty");
  HybridDecoder<T> dec(m);
  DecodeResult<T> r;
  r.tokens.assign(prefix.begin(), prefix.end());
  for (int t : prefix) r.logits.push_back(dec.step(t));
  for (std::size_t i = 0; i < n; ++i) {
    const int next = static_cast<int>(argmax_row<T>(r.logits.back()));
    r.tokens.push_back(next);
    r.logits.push_back(dec.step(next));
  }
  r.state_scalars = dec.state_scalar_count();
  return r;
}

// ---------------------------------------------------------------------------
// Training

enum class Schedule { Constant, Cosine };

inline std::string to_string(Schedule s) { return s == Schedule::Cosine ? "cosine" : "constant"; }
inline Schedule schedule_from_string(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "constant") return Schedule::Constant;
  throw ConfigError("unknown schedule '" + s + "'", "train.schedule");
}

struct TrainConfig {
  double lr = 1e-3;
  double min_lr = 0.0;
  double warmup_frac = 0.01;
  Schedule schedule = Schedule::Cosine;
  std::size_t batch = 32;
  std::size_t steps = 2000;
  double grad_clip = 1.0;  // <= 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t eval_every = 0;  // 0: evaluate only at the end
  std::size_t eval_batch = 128;
  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& t) {
  if (!(t.lr >= 0)) throw ConfigError("lr must be >= 0", "train.lr");
  if (!(t.min_lr >= 0) || t.min_lr > t.lr) throw ConfigError("need 0 <= min_lr <= lr", "train.min_lr");
  if (!(t.warmup_frac >= 0 && t.warmup_frac < 1)) throw ConfigError("warmup_frac must lie in [0, 1)", "train.warmup_frac");
  if (t.batch < 1) throw ConfigError("batch must be >= 1", "train.batch");
  if (!(t.beta1 >= 0 && t.beta1 < 1) || !(t.beta2 >= 0 && t.beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)", "train.beta1");
  }
  if (!(t.adam_eps > 0)) throw ConfigError("adam_eps must be positive", "train.adam_eps");
  if (t.eval_batch < 1) throw ConfigError("eval_batch must be >= 1", "train.eval_batch");
}

inline std::size_t warmup_steps(const TrainConfig& t) {
  return static_cast<std::size_t>(std::ceil(t.warmup_frac * static_cast<double>(t.steps)));
}

// Linear warmup to lr, then constant or cosine decay to min_lr.
inline double learning_rate(const TrainConfig& t, std::size_t step) {
  const std::size_t w = warmup_steps(t);
  if (step < w) return t.lr * static_cast<double>(step + 1) / static_cast<double>(w);
  if (t.schedule == Schedule::Constant || t.steps <= w) return t.lr;
  const double frac = static_cast<double>(step - w) / static_cast<double>(t.steps - w);
  return t.min_lr + 0.5 * (t.lr - t.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T = double>
class Adam {
 public:
  Adam(double beta1, double beta2, double eps, double weight_decay = 0.0)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(std::vector<Tensor<T>>& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), T(0));
        v_.emplace_back(p.size(), T(0));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto x = p.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = static_cast<T>(b1_ * m[i] + (1 - b1_) * g[i]);
        v[i] = static_cast<T>(b2_ * v[i] + (1 - b2_) * g[i] * g[i]);
        const double upd = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * x[i];
        x[i] = static_cast<T>(x[i] - lr * upd);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  double b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

struct EvalRecord {
  std::size_t step = 0;
  double accuracy = 0;
  double loss = 0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  EvalReport final_eval;
};

template <typename T>
double batch_loss(const HybridModel<T>& m, const MqarBatch& b) {
  NoGradGuard guard;
  return static_cast<double>(
      masked_cross_entropy(m.forward(b.tokens, b.seq_len), b.targets, b.query_mask).item());
}

// Generic loop over an arbitrary batch stream (batch_for(step)). Evaluation
// uses `eval_data` when it has any rows.
template <typename T>
TrainResult train(HybridModel<T>& m, const std::function<MqarBatch(std::size_t)>& batch_for, const TrainConfig& t,
                  const MqarBatch& eval_data = {}, const std::function<void(const StepRecord&)>& on_step = {}) {
  validate(t);
  std::vector<Tensor<T>> params;
  for (auto& [name, p] : m.parameters()) params.push_back(p);
  for (auto& p : params) p.set_requires_grad(true);
  Adam<T> opt(t.beta1, t.beta2, t.adam_eps, t.weight_decay);
  TrainResult res;
  auto run_eval = [&](std::size_t step) {
    if (eval_data.tokens.empty()) return;
    NoGradGuard guard;
    auto logits = m.forward(eval_data.tokens, eval_data.seq_len);
    res.final_eval = evaluate_logits(eval_data, logits);
    const double loss =
        static_cast<double>(masked_cross_entropy(logits, eval_data.targets, eval_data.query_mask).item());
    res.evals.push_back({step, res.final_eval.accuracy(), loss});
  };
  for (std::size_t s = 0; s < t.steps; ++s) {
    const MqarBatch b = batch_for(s);
    for (auto& p : params) p.zero_grad();
    Tensor<T> loss = masked_cross_entropy(m.forward(b.tokens, b.seq_len), b.targets, b.query_mask);
    const double lv = static_cast<double>(loss.item());
    if (!std::isfinite(lv)) throw TrainingError("loss became non-finite", s);
    loss.backward();
    double sq = 0;
    for (const auto& p : params)
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingError("gradient became non-finite", s);
    if (t.grad_clip > 0 && norm > t.grad_clip) {
      const T sc = static_cast<T>(t.grad_clip / norm);
      for (auto& p : params)
        for (auto& g : p.node()->grad) g *= sc;
    }
    const double lr = learning_rate(t, s);
    opt.step(params, lr);
    res.steps.push_back({s, lv, lr, norm});
    if (on_step) on_step(res.steps.back());
    if (t.eval_every && (s + 1) % t.eval_every == 0 && s + 1 < t.steps) run_eval(s + 1);
  }
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(false);
  }
  run_eval(t.steps);
  return res;
}

// Held-out evaluation stream seed for a task seed.
inline std::uint64_t eval_seed(std::uint64_t task_seed) { return mix_seed(task_seed, 0x5EED0E7A1ULL); }

template <typename T>
TrainResult train_mqar(HybridModel<T>& m, const MqarConfig& task, const TrainConfig& t,
                       const std::function<void(const StepRecord&)>& on_step = {}) {
  validate(task);
  if (task.vocab() > m.config.vocab) throw ConfigError("model vocab smaller than task vocab", "model.vocab");
  MqarConfig ev = task;
  ev.seed = eval_seed(task.seed);
  const MqarBatch eval_data = generate(ev, t.eval_batch, 0);
  return train<T>(
      m, [&](std::size_t s) { return generate(task, t.batch, s); }, t, eval_data, on_step);
}

}  // namespace basedlab
