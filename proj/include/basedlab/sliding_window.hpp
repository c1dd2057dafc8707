// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Exact softmax attention over a trailing token window j in [i-w+1, i], with
// optional rotary positions and a ring-buffer cache for decoding.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "basedlab/errors.hpp"
#include "basedlab/rng.hpp"
#include "basedlab/tensor.hpp"

namespace basedlab {

template <typename T = double>
struct SwaParams {
  Tensor<T> wq, wk, wv;  // d_model x (heads * d)
  Tensor<T> wo;          // (heads * d) x d_model
  std::size_t window = 64;
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  bool rotary = true;
  double rope_base = 10000.0;

  std::size_t d_model() const { return wq.dim(0); }
};

template <typename T>
void validate(const SwaParams<T>& p) {
  if (p.window < 1) throw ParameterError("sliding window size must be >= 1");
  if (p.heads == 0 || p.head_dim == 0) throw ParameterError("sliding window needs heads >= 1 and head_dim >= 1");
  if (p.rotary && p.head_dim % 2) throw ParameterError("rotary positions need an even head dimension");
  const std::size_t dm = p.wq.dim(0), hd = p.heads * p.head_dim;
  if (p.wq.shape() != Shape{dm, hd} || p.wk.shape() != Shape{dm, hd} || p.wv.shape() != Shape{dm, hd} ||
      p.wo.shape() != Shape{hd, dm}) {
    throw DimensionError("sliding window projection shapes inconsistent with d_model/heads/head_dim");
  }
}

template <typename T = double>
SwaParams<T> init_sliding_window(std::size_t d_model, std::size_t heads, std::size_t head_dim, std::size_t window,
                                 bool rotary, Rng& rng, double stddev = 0.02) {
  SwaParams<T> p;
  p.window = window;
  p.heads = heads;
  p.head_dim = head_dim;
  p.rotary = rotary;
  p.wq = rng.normal_tensor<T>({d_model, heads * head_dim}, stddev);
  p.wk = rng.normal_tensor<T>({d_model, heads * head_dim}, stddev);
  p.wv = rng.normal_tensor<T>({d_model, heads * head_dim}, stddev);
  p.wo = rng.normal_tensor<T>({heads * head_dim, d_model}, stddev);
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Rotary positions

namespace detail {

inline double rotary_angle(double pos, std::size_t m, std::size_t d, double base) {
  return pos * std::pow(base, -2.0 * static_cast<double>(m) / static_cast<double>(d));
}

// Rotates pairs (2m, 2m+1) of one head row by the given cos/sin per pair.
// sign = -1 applies the inverse rotation.
template <typename T>
void rotate_with(const T* in, T* out, std::size_t d, const T* cs, const T* sn, T sign = T(1)) {
  for (std::size_t m = 0; m < d / 2; ++m) {
    const T c = cs[m], s = sign * sn[m];
    const T a = in[2 * m], b = in[2 * m + 1];
    out[2 * m] = c * a - s * b;
    out[2 * m + 1] = s * a + c * b;
  }
}

// cos/sin of every pair angle for positions 0..max_pos.
template <typename T>
struct RotaryTable {
  std::size_t half = 0;
  std::vector<T> cos, sin;
  RotaryTable(std::size_t max_pos, std::size_t d, double base) : half(d / 2), cos((max_pos + 1) * half), sin(cos.size()) {
    for (std::size_t p = 0; p <= max_pos; ++p)
      for (std::size_t m = 0; m < half; ++m) {
        const double th = rotary_angle(static_cast<double>(p), m, d, base);
        cos[p * half + m] = static_cast<T>(std::cos(th));
        sin[p * half + m] = static_cast<T>(std::sin(th));
      }
  }
  const T* c(std::size_t pos) const { return cos.data() + pos * half; }
  const T* s(std::size_t pos) const { return sin.data() + pos * half; }
};

}  // namespace detail

// x: [R x (heads*d)], positions: one absolute position per row.
template <typename T>
Tensor<T> rotary_apply(const Tensor<T>& x, std::span<const std::size_t> positions, std::size_t heads = 1,
                       double base = 10000.0) {
  detail::require_rank2(x, "rotary_apply");
  const std::size_t R = x.dim(0);
  if (heads == 0 || x.dim(1) % heads) throw DimensionError("rotary_apply: width not divisible by heads");
  const std::size_t d = x.dim(1) / heads;
  if (d % 2) throw ParameterError("rotary_apply: head dimension " + std::to_string(d) + " is odd");
  if (positions.size() != R) throw DimensionError("rotary_apply: one position per row required");
  std::vector<T> y(x.size());
  const std::size_t max_pos = R ? *std::max_element(positions.begin(), positions.end()) : 0;
  auto table = std::make_shared<const detail::RotaryTable<T>>(max_pos, d, base);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = r * heads * d + h * d;
      detail::rotate_with<T>(x.data().data() + off, y.data() + off, d, table->c(positions[r]), table->s(positions[r]));
    }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return detail::record<T>(x.shape(), std::move(y), {x}, "rotary", [R, heads, d, table, pos = std::move(pos)](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    std::vector<T> tmp(d);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = r * heads * d + h * d;
        detail::rotate_with<T>(out.grad.data() + off, tmp.data(), d, table->c(pos[r]), table->s(pos[r]), T(-1));
        for (std::size_t c = 0; c < d; ++c) g[off + c] += tmp[c];
      }
  });
}

// Positions 0..seq_len-1 repeated for each stacked sequence.
inline std::vector<std::size_t> sequence_positions(std::size_t rows, std::size_t seq_len) {
  std::vector<std::size_t> pos(rows);
  for (std::size_t r = 0; r < rows; ++r) pos[r] = r % seq_len;
  return pos;
}

// ---------------------------------------------------------------------------
// Windowed attention kernel

// y_i = sum_j softmax_j(q_i . k_j / sqrt(d)) v_j over j in [max(0, i-w+1), i],
// per stacked sequence and head. Differentiable in q, k, v.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                           std::size_t seq_len, std::size_t window) {
  detail::require_rank2(q, "window_attention");
  detail::require_same_shape(q, k, "window_attention");
  detail::require_same_shape(q, v, "window_attention");
  if (window < 1) throw ParameterError("window_attention: window must be >= 1");
  const std::size_t R = q.dim(0);
  if (heads == 0 || q.dim(1) % heads) throw DimensionError("window_attention: width not divisible by heads");
  if (seq_len == 0) seq_len = R;
  detail::require_sequences<T>(R, seq_len, "window_attention");
  const std::size_t d = q.dim(1) / heads, Hd = q.dim(1);
  const std::size_t w = std::min(window, seq_len);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  // probs[(r * heads + h) * w + t] is the weight on key row r - t.
  std::vector<T> probs(R * heads * w, T(0));
  std::vector<T> y(R * Hd, T(0));
  auto Q = q.data(), K = k.data(), V = v.data();
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t i = r % seq_len;
    const std::size_t span = std::min(i + 1, w);
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qi = Q.data() + r * Hd + h * d;
      T* p = probs.data() + (r * heads + h) * w;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < span; ++t) {
        const T* kj = K.data() + (r - t) * Hd + h * d;
        T dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
        p[t] = dot * scale;
        mx = std::max(mx, p[t]);
      }
      T z = 0;
      for (std::size_t t = 0; t < span; ++t) {
        p[t] = std::exp(p[t] - mx);
        z += p[t];
      }
      T* out = y.data() + r * Hd + h * d;
      for (std::size_t t = 0; t < span; ++t) {
        p[t] /= z;
        const T* vj = V.data() + (r - t) * Hd + h * d;
        for (std::size_t c = 0; c < d; ++c) out[c] += p[t] * vj[c];
      }
    }
  }
  return detail::record<T>(
      {R, Hd}, std::move(y), {q, k, v}, "window_attention",
      [R, heads, seq_len, d, Hd, w, scale, probs = std::move(probs)](Node<T>& out) {
        auto& nq = *out.parents[0];
        auto& nk = *out.parents[1];
        auto& nv = *out.parents[2];
        std::vector<T> dp(w);
        for (std::size_t r = 0; r < R; ++r) {
          const std::size_t span = std::min(r % seq_len + 1, w);
          for (std::size_t h = 0; h < heads; ++h) {
            const T* g = out.grad.data() + r * Hd + h * d;
            const T* p = probs.data() + (r * heads + h) * w;
            T dot = 0;
            for (std::size_t t = 0; t < span; ++t) {
              const T* vj = nv.data.data() + (r - t) * Hd + h * d;
              T acc = 0;
              for (std::size_t c = 0; c < d; ++c) acc += g[c] * vj[c];
              dp[t] = acc;
              dot += p[t] * acc;
            }
            const T* qi = nq.data.data() + r * Hd + h * d;
            for (std::size_t t = 0; t < span; ++t) {
              const std::size_t rj = r - t;
              const T ds = p[t] * (dp[t] - dot) * scale;
              if (nv.requires_grad) {
                T* gv = nv.grad_buffer().data() + rj * Hd + h * d;
                for (std::size_t c = 0; c < d; ++c) gv[c] += p[t] * g[c];
              }
              const T* kj = nk.data.data() + rj * Hd + h * d;
              if (nq.requires_grad) {
                T* gq = nq.grad_buffer().data() + r * Hd + h * d;
                for (std::size_t c = 0; c < d; ++c) gq[c] += ds * kj[c];
              }
              if (nk.requires_grad) {
                T* gk = nk.grad_buffer().data() + rj * Hd + h * d;
                for (std::size_t c = 0; c < d; ++c) gk[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> swa_forward(const SwaParams<T>& p, const Tensor<T>& u, std::size_t seq_len = 0) {
  validate(p);
  const std::size_t R = u.dim(0);
  if (seq_len == 0) seq_len = R;
  Tensor<T> q = matmul(u, p.wq), k = matmul(u, p.wk), v = matmul(u, p.wv);
  if (p.rotary) {
    const auto pos = sequence_positions(R, seq_len);
    q = rotary_apply(q, pos, p.heads, p.rope_base);
    k = rotary_apply(k, pos, p.heads, p.rope_base);
  }
  return matmul(window_attention(q, k, v, p.heads, seq_len, p.window), p.wo);
}

// ---------------------------------------------------------------------------
// Decoding

// Last min(t, w) key and value rows per head. Keys are stored already rotated
// at their absolute positions.
template <typename T = double>
class WindowCache {
 public:
  WindowCache() = default;
  WindowCache(std::size_t heads, std::size_t head_dim, std::size_t window)
      : heads_(heads), d_(head_dim), w_(window), keys_(heads * window * head_dim), values_(keys_.size()),
        positions_(window, 0) {
    if (window < 1) throw ParameterError("WindowCache: window must be >= 1");
  }

  std::size_t size() const { return std::min(t_, w_); }
  std::size_t tokens_seen() const { return t_; }
  std::size_t window() const { return w_; }
  std::size_t cursor() const { return t_ % w_; }
  // Absolute position of the oldest cached entry.
  std::size_t oldest_position() const { return t_ > w_ ? t_ - w_ : 0; }

  // Scalars held: 2 * d * min(t, w) per head.
  std::size_t scalar_count() const { return 2 * d_ * size() * heads_; }

  void append(std::span<const T> k_row, std::span<const T> v_row) {
    if (k_row.size() != heads_ * d_ || v_row.size() != heads_ * d_) throw DimensionError("WindowCache: row width");
    const std::size_t slot = cursor();
    for (std::size_t h = 0; h < heads_; ++h) {
      std::copy_n(k_row.data() + h * d_, d_, keys_.data() + (h * w_ + slot) * d_);
      std::copy_n(v_row.data() + h * d_, d_, values_.data() + (h * w_ + slot) * d_);
    }
    positions_[slot] = t_;
    ++t_;
  }

  // Entry e (0 = oldest) for head h.
  const T* key(std::size_t h, std::size_t e) const { return keys_.data() + (h * w_ + slot_of(e)) * d_; }
  const T* value(std::size_t h, std::size_t e) const { return values_.data() + (h * w_ + slot_of(e)) * d_; }
  std::size_t position(std::size_t e) const { return positions_[slot_of(e)]; }

 private:
  std::size_t slot_of(std::size_t e) const { return t_ > w_ ? (t_ + e) % w_ : e; }

  std::size_t heads_ = 0, d_ = 0, w_ = 1, t_ = 0;
  std::vector<T> keys_, values_;
  std::vector<std::size_t> positions_;
};

// Appends x_t's key/value (evicting the oldest when full) and returns the
// layer output row for x_t.
template <typename T>
std::vector<T> decode_step(const SwaParams<T>& p, WindowCache<T>& cache, std::span<const T> x) {
  const std::size_t H = p.heads, d = p.head_dim;
  if (x.size() != p.d_model()) throw DimensionError("sliding window decode_step: input width mismatch");
  auto q = detail::vecmat<T>(x, p.wq), k = detail::vecmat<T>(x, p.wk), v = detail::vecmat<T>(x, p.wv);
  const double pos = static_cast<double>(cache.tokens_seen());
  if (p.rotary) {
    std::vector<T> tmp(d), cs(d / 2), sn(d / 2);
    for (std::size_t m = 0; m < d / 2; ++m) {
      const double th = detail::rotary_angle(pos, m, d, p.rope_base);
      cs[m] = static_cast<T>(std::cos(th));
      sn[m] = static_cast<T>(std::sin(th));
    }
    for (std::size_t h = 0; h < H; ++h) {
      detail::rotate_with<T>(q.data() + h * d, tmp.data(), d, cs.data(), sn.data());
      std::copy(tmp.begin(), tmp.end(), q.begin() + h * d);
      detail::rotate_with<T>(k.data() + h * d, tmp.data(), d, cs.data(), sn.data());
      std::copy(tmp.begin(), tmp.end(), k.begin() + h * d);
    }
  }
  cache.append(k, v);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const std::size_t n = cache.size();
  std::vector<T> y(H * d, T(0)), s(n);
  // Iterate newest to oldest so the accumulation order matches window_attention.
  for (std::size_t h = 0; h < H; ++h) {
    const T* qh = q.data() + h * d;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const T* kj = cache.key(h, n - 1 - t);
      T dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += qh[c] * kj[c];
      s[t] = dot * scale;
      mx = std::max(mx, s[t]);
    }
    T z = 0;
    for (std::size_t t = 0; t < n; ++t) {
      s[t] = std::exp(s[t] - mx);
      z += s[t];
    }
    for (std::size_t t = 0; t < n; ++t) {
      const T* vj = cache.value(h, n - 1 - t);
      const T pt = s[t] / z;
      for (std::size_t c = 0; c < d; ++c) y[h * d + c] += pt * vj[c];
    }
  }
  return detail::vecmat<T>(y, p.wo);
}

}  // namespace basedlab
