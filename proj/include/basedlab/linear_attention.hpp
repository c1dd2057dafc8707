// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Causal linear attention in four numerically equivalent views:
//
//   parallel   phi features + running (cumulative) KV/K sums over positions
//   quadratic  Taylor kernel 1 + a + a^2/2 evaluated on q.k directly, O(N^2)
//   chunked    tile schedule: intra-tile T0/T1/T2 terms + inter-tile states
//   recurrent  one token at a time against a constant-size LinAttnState
//
// With decay, head h scales its KV-state and K-state by gamma_h every step.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "basedlab/errors.hpp"
#include "basedlab/feature_maps.hpp"
#include "basedlab/rng.hpp"
#include "basedlab/tensor.hpp"

namespace basedlab {

template <typename T = double>
struct DecayConfig {
  std::vector<T> gamma;  // per head, in (0, 1]
  Tensor<T> mix;         // d_model x heads
};

template <typename T = double>
struct LinAttnParams {
  Tensor<T> wq;  // d_model x (heads * d')
  Tensor<T> wk;  // d_model x (heads * d')
  Tensor<T> wv;  // d_model x (heads * d)
  Tensor<T> wo;  // (heads * d) x d_model, or d x d_model when heads are mixed
  FeatureMap fmap;
  T eps = T(1e-12);
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  std::optional<DecayConfig<T>> decay;

  std::size_t d_model() const { return wq.dim(0); }
  std::size_t d_prime() const { return fmap.d_prime; }
};

// gamma_h = 1 - 2^-(h+3)
template <typename T = double>
std::vector<T> default_decay_ladder(std::size_t heads) {
  std::vector<T> g(heads);
  for (std::size_t h = 0; h < heads; ++h) g[h] = T(1) - std::ldexp(T(1), -static_cast<int>(h + 3));
  return g;
}

template <typename T>
void validate(const LinAttnParams<T>& p) {
  validate(p.fmap);
  if (!(p.eps > T(0))) throw ParameterError("linear attention eps must be positive");
  if (p.heads == 0 || p.head_dim == 0) throw ParameterError("linear attention needs heads >= 1 and head_dim >= 1");
  const std::size_t dm = p.wq.dim(0);
  const std::size_t hq = p.heads * p.fmap.d_prime, hv = p.heads * p.head_dim;
  if (p.wq.shape() != Shape{dm, hq} || p.wk.shape() != Shape{dm, hq} || p.wv.shape() != Shape{dm, hv}) {
    throw DimensionError("linear attention projection shapes inconsistent with d_model/heads/d'/d");
  }
  const std::size_t wo_in = p.decay ? p.head_dim : hv;
  if (p.wo.shape() != Shape{wo_in, dm}) throw DimensionError("linear attention output projection shape mismatch");
  if (p.decay) {
    if (p.decay->gamma.size() != p.heads) throw DimensionError("decay needs one gamma per head");
    for (T g : p.decay->gamma) {
      if (!(g > T(0) && g <= T(1))) throw ParameterError("decay gamma must lie in (0, 1]");
    }
    if (p.decay->mix.shape() != Shape{dm, p.heads}) throw DimensionError("decay head-mixing projection shape mismatch");
  }
}

template <typename T = double>
LinAttnParams<T> init_linear_attention(std::size_t d_model, std::size_t heads, std::size_t d_prime,
                                       std::size_t head_dim, FeatureMapKind kind, bool decay, Rng& rng,
                                       double stddev = 0.02) {
  LinAttnParams<T> p;
  p.fmap = {kind, d_prime};
  p.heads = heads;
  p.head_dim = head_dim;
  p.wq = rng.normal_tensor<T>({d_model, heads * d_prime}, stddev);
  p.wk = rng.normal_tensor<T>({d_model, heads * d_prime}, stddev);
  p.wv = rng.normal_tensor<T>({d_model, heads * head_dim}, stddev);
  p.wo = rng.normal_tensor<T>({decay ? head_dim : heads * head_dim, d_model}, stddev);
  if (decay) p.decay = DecayConfig<T>{default_decay_ladder<T>(heads), rng.normal_tensor<T>({d_model, heads}, stddev)};
  validate(p);
  return p;
}

namespace detail {

template <typename T>
std::vector<T> gammas_or_ones(const std::vector<T>& gammas, std::size_t heads) {
  if (gammas.empty()) return std::vector<T>(heads, T(1));
  if (gammas.size() != heads) throw DimensionError("one decay rate per head required");
  return gammas;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable kernels over stacked sequences.

// y_i = phi_q_i S_i / max(phi_q_i . z_i, eps), S_i = gamma S_{i-1} + phi_k_i^T v_i,
// z_i = gamma z_{i-1} + phi_k_i, accumulated sequentially per sequence and head.
template <typename T>
Tensor<T> causal_linear_attention(const Tensor<T>& phi_q, const Tensor<T>& phi_k, const Tensor<T>& v,
                                  std::size_t heads, std::size_t seq_len, std::vector<T> gammas = {},
                                  T eps = T(1e-12)) {
  detail::require_rank2(phi_q, "causal_linear_attention");
  detail::require_same_shape(phi_q, phi_k, "causal_linear_attention");
  const std::size_t R = phi_q.dim(0);
  if (v.rank() != 2 || v.dim(0) != R) throw DimensionError("causal_linear_attention: value rows mismatch");
  if (heads == 0 || phi_q.dim(1) % heads || v.dim(1) % heads) {
    throw DimensionError("causal_linear_attention: widths not divisible by heads");
  }
  if (seq_len == 0) seq_len = R;
  detail::require_sequences<T>(R, seq_len, "causal_linear_attention");
  const std::size_t D = phi_q.dim(1) / heads, d = v.dim(1) / heads;
  const std::size_t HD = heads * D, Hd = heads * d;
  gammas = detail::gammas_or_ones(gammas, heads);

  std::vector<T> y(R * Hd);
  std::vector<T> den(R * heads);
  std::vector<T> S(D * d), z(D);
  auto Q = phi_q.data(), K = phi_k.data(), V = v.data();
  for (std::size_t s0 = 0; s0 < R; s0 += seq_len) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T g = gammas[h];
      std::fill(S.begin(), S.end(), T(0));
      std::fill(z.begin(), z.end(), T(0));
      for (std::size_t r = s0; r < s0 + seq_len; ++r) {
        const T* k = K.data() + r * HD + h * D;
        const T* q = Q.data() + r * HD + h * D;
        const T* vv = V.data() + r * Hd + h * d;
        for (std::size_t a = 0; a < D; ++a) {
          T* Sa = S.data() + a * d;
          for (std::size_t c = 0; c < d; ++c) Sa[c] = g * Sa[c] + k[a] * vv[c];
          z[a] = g * z[a] + k[a];
        }
        T dn = 0;
        T* out = y.data() + r * Hd + h * d;
        std::fill(out, out + d, T(0));
        for (std::size_t a = 0; a < D; ++a) {
          dn += q[a] * z[a];
          const T* Sa = S.data() + a * d;
          for (std::size_t c = 0; c < d; ++c) out[c] += q[a] * Sa[c];
        }
        den[r * heads + h] = dn;
        const T div = std::max(dn, eps);
        for (std::size_t c = 0; c < d; ++c) out[c] /= div;
      }
    }
  }
  return detail::record<T>(
      {R, Hd}, std::move(y), {phi_q, phi_k, v}, "causal_linear_attention",
      [R, heads, seq_len, D, d, HD, Hd, gammas, eps, den = std::move(den)](Node<T>& out) {
        auto& nq = *out.parents[0];
        auto& nk = *out.parents[1];
        auto& nv = *out.parents[2];
        auto Q = std::span<const T>(nq.data), K = std::span<const T>(nk.data), V = std::span<const T>(nv.data);
        std::vector<T> dnum(d), S(D * d), z(D), Rs(D * d), rs(D);
        std::vector<T> dden_all(R * heads), dnum_all(R * Hd);
        for (std::size_t s0 = 0; s0 < R; s0 += seq_len) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T g = gammas[h];
            // Upstream grads of numerator / denominator per row.
            for (std::size_t r = s0; r < s0 + seq_len; ++r) {
              const T dn = den[r * heads + h];
              const T* go = out.grad.data() + r * Hd + h * d;
              const T* yo = out.data.data() + r * Hd + h * d;
              T* dnr = dnum_all.data() + r * Hd + h * d;
              if (dn > eps) {
                T gy = 0;
                for (std::size_t c = 0; c < d; ++c) {
                  dnr[c] = go[c] / dn;
                  gy += go[c] * yo[c];
                }
                dden_all[r * heads + h] = -gy / dn;
              } else {
                for (std::size_t c = 0; c < d; ++c) dnr[c] = go[c] / eps;
                dden_all[r * heads + h] = T(0);
              }
            }
            // Forward sweep: d phi_q_i = S_i dnum_i + z_i dden_i.
            if (nq.requires_grad) {
              auto& gq = nq.grad_buffer();
              std::fill(S.begin(), S.end(), T(0));
              std::fill(z.begin(), z.end(), T(0));
              for (std::size_t r = s0; r < s0 + seq_len; ++r) {
                const T* k = K.data() + r * HD + h * D;
                const T* vv = V.data() + r * Hd + h * d;
                const T* dnr = dnum_all.data() + r * Hd + h * d;
                const T dd = dden_all[r * heads + h];
                T* gqr = gq.data() + r * HD + h * D;
                for (std::size_t a = 0; a < D; ++a) {
                  T* Sa = S.data() + a * d;
                  T acc = 0;
                  for (std::size_t c = 0; c < d; ++c) {
                    Sa[c] = g * Sa[c] + k[a] * vv[c];
                    acc += Sa[c] * dnr[c];
                  }
                  z[a] = g * z[a] + k[a];
                  gqr[a] += acc + z[a] * dd;
                }
              }
            }
            // Reverse sweep: R_i = gamma R_{i+1} + phi_q_i^T dnum_i, r_i likewise.
            if (nk.requires_grad || nv.requires_grad) {
              std::fill(Rs.begin(), Rs.end(), T(0));
              std::fill(rs.begin(), rs.end(), T(0));
              for (std::size_t r = s0 + seq_len; r-- > s0;) {
                const T* q = Q.data() + r * HD + h * D;
                const T* k = K.data() + r * HD + h * D;
                const T* vv = V.data() + r * Hd + h * d;
                const T* dnr = dnum_all.data() + r * Hd + h * d;
                const T dd = dden_all[r * heads + h];
                for (std::size_t a = 0; a < D; ++a) {
                  T* Ra = Rs.data() + a * d;
                  for (std::size_t c = 0; c < d; ++c) Ra[c] = g * Ra[c] + q[a] * dnr[c];
                  rs[a] = g * rs[a] + q[a] * dd;
                }
                if (nk.requires_grad) {
                  T* gk = nk.grad_buffer().data() + r * HD + h * D;
                  for (std::size_t a = 0; a < D; ++a) {
                    const T* Ra = Rs.data() + a * d;
                    T acc = rs[a];
                    for (std::size_t c = 0; c < d; ++c) acc += Ra[c] * vv[c];
                    gk[a] += acc;
                  }
                }
                if (nv.requires_grad) {
                  T* gv = nv.grad_buffer().data() + r * Hd + h * d;
                  for (std::size_t a = 0; a < D; ++a) {
                    const T* Ra = Rs.data() + a * d;
                    for (std::size_t c = 0; c < d; ++c) gv[c] += Ra[c] * k[a];
                  }
                }
              }
            }
          }
        }
      });
}

// Taylor linear attention evaluated through its kernel: weight(i, j) =
// gamma^(i-j) (1 + a + a^2/2), a = q_i . k_j / sqrt(d'), for j <= i. Identical
// to the parallel view with the Taylor feature map, without materializing phi.
template <typename T>
Tensor<T> taylor_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                           std::size_t seq_len, std::vector<T> gammas = {}, T eps = T(1e-12)) {
  detail::require_rank2(q, "taylor_attention");
  detail::require_same_shape(q, k, "taylor_attention");
  const std::size_t R = q.dim(0);
  if (v.rank() != 2 || v.dim(0) != R) throw DimensionError("taylor_attention: value rows mismatch");
  if (heads == 0 || q.dim(1) % heads || v.dim(1) % heads) {
    throw DimensionError("taylor_attention: widths not divisible by heads");
  }
  if (seq_len == 0) seq_len = R;
  detail::require_sequences<T>(R, seq_len, "taylor_attention");
  const std::size_t dp = q.dim(1) / heads, d = v.dim(1) / heads;
  const std::size_t Hp = heads * dp, Hd = heads * d;
  gammas = detail::gammas_or_ones(gammas, heads);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dp));

  // powers[h][t] = gamma_h^t
  std::vector<std::vector<T>> powers(heads, std::vector<T>(seq_len));
  for (std::size_t h = 0; h < heads; ++h) {
    T p = 1;
    for (std::size_t t = 0; t < seq_len; ++t) {
      powers[h][t] = p;
      p *= gammas[h];
    }
  }

  std::vector<T> y(R * Hd, T(0));
  std::vector<T> den(R * heads);
  std::vector<T> a(seq_len);
  auto Q = q.data(), K = k.data(), V = v.data();
  for (std::size_t s0 = 0; s0 < R; s0 += seq_len) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq_len; ++i) {
        const T* qi = Q.data() + (s0 + i) * Hp + h * dp;
        T* out = y.data() + (s0 + i) * Hd + h * d;
        T dn = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = K.data() + (s0 + j) * Hp + h * dp;
          T dot = 0;
          for (std::size_t c = 0; c < dp; ++c) dot += qi[c] * kj[c];
          const T aa = dot * inv_sqrt;
          const T w = powers[h][i - j] * (T(1) + aa + aa * aa / T(2));
          dn += w;
          const T* vj = V.data() + (s0 + j) * Hd + h * d;
          for (std::size_t c = 0; c < d; ++c) out[c] += w * vj[c];
        }
        den[(s0 + i) * heads + h] = dn;
        const T div = std::max(dn, eps);
        for (std::size_t c = 0; c < d; ++c) out[c] /= div;
      }
    }
  }
  return detail::record<T>(
      {R, Hd}, std::move(y), {q, k, v}, "taylor_attention",
      [R, heads, seq_len, dp, d, Hp, Hd, inv_sqrt, eps, powers = std::move(powers), den = std::move(den)](Node<T>& out) {
        auto& nq = *out.parents[0];
        auto& nk = *out.parents[1];
        auto& nv = *out.parents[2];
        std::vector<T> dnum(d);
        for (std::size_t s0 = 0; s0 < R; s0 += seq_len) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < seq_len; ++i) {
              const std::size_t ri = s0 + i;
              const T dn = den[ri * heads + h];
              const T* go = out.grad.data() + ri * Hd + h * d;
              const T* yo = out.data.data() + ri * Hd + h * d;
              T dden = 0;
              if (dn > eps) {
                T gy = 0;
                for (std::size_t c = 0; c < d; ++c) {
                  dnum[c] = go[c] / dn;
                  gy += go[c] * yo[c];
                }
                dden = -gy / dn;
              } else {
                for (std::size_t c = 0; c < d; ++c) dnum[c] = go[c] / eps;
              }
              const T* qi = nq.data.data() + ri * Hp + h * dp;
              for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t rj = s0 + j;
                const T* kj = nk.data.data() + rj * Hp + h * dp;
                const T* vj = nv.data.data() + rj * Hd + h * d;
                T dot = 0;
                for (std::size_t c = 0; c < dp; ++c) dot += qi[c] * kj[c];
                const T aa = dot * inv_sqrt;
                const T pw = powers[h][i - j];
                const T w = pw * (T(1) + aa + aa * aa / T(2));
                T dw = dden;
                for (std::size_t c = 0; c < d; ++c) dw += dnum[c] * vj[c];
                if (nv.requires_grad) {
                  T* gv = nv.grad_buffer().data() + rj * Hd + h * d;
                  for (std::size_t c = 0; c < d; ++c) gv[c] += w * dnum[c];
                }
                const T dd = dw * pw * (T(1) + aa) * inv_sqrt;
                if (nq.requires_grad) {
                  T* gq = nq.grad_buffer().data() + ri * Hp + h * dp;
                  for (std::size_t c = 0; c < dp; ++c) gq[c] += dd * kj[c];
                }
                if (nk.requires_grad) {
                  T* gk = nk.grad_buffer().data() + rj * Hp + h * dp;
                  for (std::size_t c = 0; c < dp; ++c) gk[c] += dd * qi[c];
                }
              }
            }
          }
        }
      });
}

// out[r] = sum_h weights[r, h] * y[r, h*d : (h+1)*d]
template <typename T>
Tensor<T> weighted_head_sum(const Tensor<T>& y, const Tensor<T>& weights, std::size_t heads) {
  detail::require_rank2(y, "weighted_head_sum");
  detail::require_rank2(weights, "weighted_head_sum");
  const std::size_t R = y.dim(0);
  if (weights.shape() != Shape{R, heads} || heads == 0 || y.dim(1) % heads) {
    throw DimensionError("weighted_head_sum: weights " + shape_str(weights.shape()) + " vs heads of " +
                         shape_str(y.shape()));
  }
  const std::size_t d = y.dim(1) / heads;
  std::vector<T> out(R * d, T(0));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t h = 0; h < heads; ++h) {
      const T w = weights[r * heads + h];
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] += w * y[r * heads * d + h * d + c];
    }
  return detail::record<T>({R, d}, std::move(out), {y, weights}, "weighted_head_sum", [R, heads, d](Node<T>& o) {
    auto& ny = *o.parents[0];
    auto& nw = *o.parents[1];
    for (std::size_t r = 0; r < R; ++r) {
      const T* g = o.grad.data() + r * d;
      for (std::size_t h = 0; h < heads; ++h) {
        const T* yh = ny.data.data() + r * heads * d + h * d;
        if (ny.requires_grad) {
          T* gy = ny.grad_buffer().data() + r * heads * d + h * d;
          const T w = nw.data[r * heads + h];
          for (std::size_t c = 0; c < d; ++c) gy[c] += w * g[c];
        }
        if (nw.requires_grad) {
          T acc = 0;
          for (std::size_t c = 0; c < d; ++c) acc += yh[c] * g[c];
          nw.grad_buffer()[r * heads + h] += acc;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layer-level forward passes.

// Learned head weighting softmax(u Wmix), applied to per-head outputs, then Wo.
template <typename T>
Tensor<T> mix_heads(const LinAttnParams<T>& p, const Tensor<T>& u, const Tensor<T>& per_head_y) {
  if (!p.decay) throw ContractError("mix_heads requires a decay configuration");
  Tensor<T> w = softmax_last(matmul(u, p.decay->mix));
  return matmul(weighted_head_sum(per_head_y, w, p.heads), p.wo);
}

namespace detail {

template <typename T>
Tensor<T> finish_heads(const LinAttnParams<T>& p, const Tensor<T>& u, const Tensor<T>& yh) {
  return p.decay ? mix_heads(p, u, yh) : matmul(yh, p.wo);
}

template <typename T>
std::vector<T> head_gammas(const LinAttnParams<T>& p) {
  return p.decay ? p.decay->gamma : std::vector<T>{};
}

}  // namespace detail

// Per-head outputs [R x (heads*d)] before head mixing / output projection.
template <typename T>
Tensor<T> parallel_heads(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t seq_len = 0) {
  validate(p);
  Tensor<T> q = apply(p.fmap, matmul(u, p.wq), p.heads);
  Tensor<T> k = apply(p.fmap, matmul(u, p.wk), p.heads);
  Tensor<T> v = matmul(u, p.wv);
  return causal_linear_attention(q, k, v, p.heads, seq_len, detail::head_gammas(p), p.eps);
}

template <typename T>
Tensor<T> parallel_forward(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t seq_len = 0) {
  return detail::finish_heads(p, u, parallel_heads(p, u, seq_len));
}

// Same result as parallel_forward for the Taylor map at O(N^2 (d' + d)) cost per
// head instead of O(N D d). Falls back to the parallel view for other maps.
template <typename T>
Tensor<T> quadratic_forward(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t seq_len = 0) {
  if (p.fmap.kind != FeatureMapKind::TaylorExp2) return parallel_forward(p, u, seq_len);
  validate(p);
  Tensor<T> yh = taylor_attention(matmul(u, p.wq), matmul(u, p.wk), matmul(u, p.wv), p.heads, seq_len,
                                  detail::head_gammas(p), p.eps);
  return detail::finish_heads(p, u, yh);
}

// ---------------------------------------------------------------------------
// Recurrent view.

template <typename T = double>
struct LinAttnState {
  std::size_t feature_dim = 0;  // D
  std::size_t value_dim = 0;    // d
  FeatureLayout layout = FeatureLayout::Full;
  std::vector<T> s;  // D x d KV-state
  std::vector<T> z;  // D K-state
  std::size_t t = 0;

  static LinAttnState zeros(const FeatureMap& map, std::size_t value_dim, FeatureLayout layout = FeatureLayout::Full) {
    LinAttnState st;
    st.feature_dim = basedlab::feature_dim(map, layout);
    st.value_dim = value_dim;
    st.layout = layout;
    st.s.assign(st.feature_dim * value_dim, T(0));
    st.z.assign(st.feature_dim, T(0));
    return st;
  }

  std::size_t scalar_count() const { return s.size() + z.size(); }
};

// In-place update: s = gamma s + phi(k)^T v, z = gamma z + phi(k); returns
// y = phi(q) s / max(phi(q) . z, eps).
template <typename T>
std::vector<T> recurrent_update(const FeatureMap& map, LinAttnState<T>& st, std::span<const T> q,
                                std::span<const T> k, std::span<const T> v, T gamma = T(1), T eps = T(1e-12)) {
  if (q.size() != map.d_prime || k.size() != map.d_prime || v.size() != st.value_dim ||
      st.feature_dim != basedlab::feature_dim(map, st.layout)) {
    throw DimensionError("recurrent_step: q/k must have length " + std::to_string(map.d_prime) + " and v length " +
                         std::to_string(st.value_dim));
  }
  const std::size_t D = st.feature_dim, d = st.value_dim;
  std::vector<T> fq = featurize<T>(map, q, st.layout, FeatureRole::Query);
  std::vector<T> fk = featurize<T>(map, k, st.layout, FeatureRole::Key);
  for (std::size_t a = 0; a < D; ++a) {
    T* sa = st.s.data() + a * d;
    for (std::size_t c = 0; c < d; ++c) sa[c] = gamma * sa[c] + fk[a] * v[c];
    st.z[a] = gamma * st.z[a] + fk[a];
  }
  ++st.t;
  std::vector<T> y(d, T(0));
  T den = 0;
  for (std::size_t a = 0; a < D; ++a) {
    den += fq[a] * st.z[a];
    const T* sa = st.s.data() + a * d;
    for (std::size_t c = 0; c < d; ++c) y[c] += fq[a] * sa[c];
  }
  const T div = std::max(den, eps);
  for (auto& yc : y) yc /= div;
  return y;
}

template <typename T = double>
struct LinAttnStep {
  LinAttnState<T> state;
  std::vector<T> y;
};

template <typename T>
LinAttnStep<T> recurrent_step(const FeatureMap& map, LinAttnState<T> state, std::span<const T> q,
                              std::span<const T> k, std::span<const T> v, T gamma = T(1), T eps = T(1e-12)) {
  auto y = recurrent_update(map, state, q, k, v, gamma, eps);
  return {std::move(state), std::move(y)};
}

// Multi-head recurrent decoder for one layer: per-head states plus the input
// and output projections. Packed layout stores only unique Taylor monomials.
template <typename T = double>
class LinAttnDecoder {
 public:
  LinAttnDecoder() = default;
  LinAttnDecoder(const LinAttnParams<T>& p, FeatureLayout layout) : params_(&p) {
    validate(p);
    for (std::size_t h = 0; h < p.heads; ++h) states_.push_back(LinAttnState<T>::zeros(p.fmap, p.head_dim, layout));
  }

  // u: one row of width d_model. Returns the layer output row (d_model).
  std::vector<T> step(std::span<const T> u) {
    const auto& p = *params_;
    const std::size_t dm = p.d_model(), dp = p.d_prime(), d = p.head_dim, H = p.heads;
    if (u.size() != dm) throw DimensionError("LinAttnDecoder::step: input width mismatch");
    auto q = detail::vecmat<T>(u, p.wq), k = detail::vecmat<T>(u, p.wk), v = detail::vecmat<T>(u, p.wv);
    std::vector<T> yh(H * d);
    for (std::size_t h = 0; h < H; ++h) {
      const T g = p.decay ? p.decay->gamma[h] : T(1);
      auto y = recurrent_update<T>(p.fmap, states_[h], std::span<const T>(q).subspan(h * dp, dp),
                                   std::span<const T>(k).subspan(h * dp, dp),
                                   std::span<const T>(v).subspan(h * d, d), g, p.eps);
      std::copy(y.begin(), y.end(), yh.begin() + h * d);
    }
    if (!p.decay) return detail::vecmat<T>(yh, p.wo);
    auto logits = detail::vecmat<T>(u, p.decay->mix);
    T mx = *std::max_element(logits.begin(), logits.end());
    T zsum = 0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      zsum += l;
    }
    std::vector<T> mixed(d, T(0));
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t c = 0; c < d; ++c) mixed[c] += (logits[h] / zsum) * yh[h * d + c];
    return detail::vecmat<T>(mixed, p.wo);
  }

  const std::vector<LinAttnState<T>>& states() const { return states_; }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& s : states_) n += s.scalar_count();
    return n;
  }

 private:
  const LinAttnParams<T>* params_ = nullptr;
  std::vector<LinAttnState<T>> states_;
};

// Token-by-token rollout over each stacked sequence of u.
template <typename T>
Tensor<T> recurrent_forward(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t seq_len = 0,
                            FeatureLayout layout = FeatureLayout::Full) {
  const std::size_t R = u.dim(0), dm = u.dim(1);
  if (seq_len == 0) seq_len = R;
  detail::require_sequences<T>(R, seq_len, "recurrent_forward");
  std::vector<T> out(R * dm);
  for (std::size_t s0 = 0; s0 < R; s0 += seq_len) {
    LinAttnDecoder<T> dec(p, layout);
    for (std::size_t r = s0; r < s0 + seq_len; ++r) {
      auto y = dec.step(u.data().subspan(r * dm, dm));
      std::copy(y.begin(), y.end(), out.begin() + r * dm);
    }
  }
  return Tensor<T>({R, dm}, std::move(out));
}

// ---------------------------------------------------------------------------
// Chunked (tiled) view.

// Modeled HBM<->SRAM element transfers at tile boundaries.
struct TransferCounters {
  std::size_t q_loads = 0;
  std::size_t k_loads = 0;
  std::size_t v_loads = 0;
  std::size_t y_stores = 0;
  std::size_t tiles = 0;
  std::size_t reads() const { return q_loads + k_loads + v_loads; }
  std::size_t total() const { return reads() + y_stores; }
};

namespace detail {

// One head of one sequence. q, k: N x dp (row stride qs), v: N x d (row stride vs);
// writes y rows (stride ys).
template <typename T>
void chunked_head(const FeatureMap& map, const T* q, const T* k, const T* v, T* y, std::size_t N, std::size_t dp,
                  std::size_t d, std::size_t qs, std::size_t vs, std::size_t ys, std::size_t chunk, T gamma, T eps,
                  TransferCounters* counters) {
  const bool taylor = map.kind == FeatureMapKind::TaylorExp2;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dp));
  const detail::TaylorScales<T> sc(dp);
  const std::size_t D = feature_dim(map);

  // Taylor: A0 (d), A1 (dp x d), A2 (dp^2 x d) plus K-states Z0, Z1 (dp), Z2 (dp^2).
  // Other maps: one D x d state and a D K-state, stored in A1 / Z1.
  std::vector<T> A0(d, T(0)), A1((taylor ? dp : D) * d, T(0)), A2(taylor ? dp * dp * d : 0, T(0));
  T Z0 = 0;
  std::vector<T> Z1(taylor ? dp : D, T(0)), Z2(taylor ? dp * dp : 0, T(0));
  std::vector<T> fq(D), fk(D), num(d), decay_pow(chunk + 1);
  decay_pow[0] = T(1);
  for (std::size_t t = 1; t <= chunk; ++t) decay_pow[t] = decay_pow[t - 1] * gamma;

  for (std::size_t t0 = 0; t0 < N; t0 += chunk) {
    const std::size_t t1 = std::min(N, t0 + chunk);
    const std::size_t len = t1 - t0;
    if (counters) {
      counters->q_loads += len * dp;
      counters->k_loads += len * dp;
      counters->v_loads += len * d;
      ++counters->tiles;
    }
    for (std::size_t i = t0; i < t1; ++i) {
      const T* qi = q + i * qs;
      T* out = y + i * ys;
      // Inter-tile contribution from the running states.
      const T carry = decay_pow[i - t0 + 1];
      T den = 0;
      std::fill(num.begin(), num.end(), T(0));
      if (taylor) {
        featurize<T>(map, std::span<const T>(qi, dp), fq);
        den += Z0;
        for (std::size_t c = 0; c < d; ++c) num[c] += A0[c];
        for (std::size_t a = 0; a < dp; ++a) {
          const T f = fq[1 + a];
          den += f * Z1[a];
          for (std::size_t c = 0; c < d; ++c) num[c] += f * A1[a * d + c];
        }
        for (std::size_t a = 0; a < dp * dp; ++a) {
          const T f = fq[1 + dp + a];
          den += f * Z2[a];
          for (std::size_t c = 0; c < d; ++c) num[c] += f * A2[a * d + c];
        }
      } else {
        featurize<T>(map, std::span<const T>(qi, dp), fq);
        for (std::size_t a = 0; a < D; ++a) {
          den += fq[a] * Z1[a];
          for (std::size_t c = 0; c < d; ++c) num[c] += fq[a] * A1[a * d + c];
        }
      }
      den *= carry;
      for (auto& x : num) x *= carry;
      // Intra-tile causal terms.
      for (std::size_t j = t0; j <= i; ++j) {
        const T* kj = k + j * qs;
        const T* vj = v + j * vs;
        const T pw = decay_pow[i - j];
        T w;
        if (taylor) {
          T dot = 0;
          for (std::size_t c = 0; c < dp; ++c) dot += qi[c] * kj[c];
          const T a = dot * inv_sqrt;
          const T t0w = pw, t1w = pw * a, t2w = pw * a * a / T(2);
          w = t0w + t1w + t2w;
          for (std::size_t c = 0; c < d; ++c) num[c] += t0w * vj[c] + t1w * vj[c] + t2w * vj[c];
        } else {
          featurize<T>(map, std::span<const T>(kj, dp), fk);
          T dot = 0;
          for (std::size_t a = 0; a < D; ++a) dot += fq[a] * fk[a];
          w = pw * dot;
          for (std::size_t c = 0; c < d; ++c) num[c] += w * vj[c];
        }
        den += w;
      }
      const T div = std::max(den, eps);
      for (std::size_t c = 0; c < d; ++c) out[c] = num[c] / div;
    }
    // Fold the tile into the running states.
    const T fold = decay_pow[len];
    for (auto& x : A0) x *= fold;
    for (auto& x : A1) x *= fold;
    for (auto& x : A2) x *= fold;
    Z0 *= fold;
    for (auto& x : Z1) x *= fold;
    for (auto& x : Z2) x *= fold;
    for (std::size_t j = t0; j < t1; ++j) {
      const T* kj = k + j * qs;
      const T* vj = v + j * vs;
      const T pw = decay_pow[t1 - 1 - j];
      featurize<T>(map, std::span<const T>(kj, dp), fk);
      if (taylor) {
        Z0 += pw;
        for (std::size_t c = 0; c < d; ++c) A0[c] += pw * vj[c];
        for (std::size_t a = 0; a < dp; ++a) {
          const T f = pw * fk[1 + a];
          Z1[a] += f;
          for (std::size_t c = 0; c < d; ++c) A1[a * d + c] += f * vj[c];
        }
        for (std::size_t a = 0; a < dp * dp; ++a) {
          const T f = pw * fk[1 + dp + a];
          Z2[a] += f;
          for (std::size_t c = 0; c < d; ++c) A2[a * d + c] += f * vj[c];
        }
      } else {
        for (std::size_t a = 0; a < D; ++a) {
          const T f = pw * fk[a];
          Z1[a] += f;
          for (std::size_t c = 0; c < d; ++c) A1[a * d + c] += f * vj[c];
        }
      }
    }
    if (counters) counters->y_stores += len * d;
  }
}

}  // namespace detail

// Per-head outputs of the tiled schedule. Not differentiable.
template <typename T>
Tensor<T> chunked_heads(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t chunk, std::size_t seq_len = 0,
                        TransferCounters* counters = nullptr) {
  validate(p);
  if (chunk < 1) throw ParameterError("chunked_forward: chunk must be >= 1");
  const std::size_t R = u.dim(0);
  if (seq_len == 0) seq_len = R;
  detail::require_sequences<T>(R, seq_len, "chunked_forward");
  chunk = std::min(chunk, seq_len);
  NoGradGuard guard;
  Tensor<T> q = matmul(u, p.wq), k = matmul(u, p.wk), v = matmul(u, p.wv);
  const std::size_t dp = p.d_prime(), d = p.head_dim, H = p.heads;
  std::vector<T> y(R * H * d);
  const auto gam = detail::gammas_or_ones(detail::head_gammas(p), H);
  for (std::size_t s0 = 0; s0 < R; s0 += seq_len) {
    for (std::size_t h = 0; h < H; ++h) {
      detail::chunked_head<T>(p.fmap, q.data().data() + s0 * H * dp + h * dp, k.data().data() + s0 * H * dp + h * dp,
                              v.data().data() + s0 * H * d + h * d, y.data() + s0 * H * d + h * d, seq_len, dp, d,
                              H * dp, H * d, H * d, chunk, gam[h], p.eps, counters);
    }
  }
  return Tensor<T>({R, H * d}, std::move(y));
}

template <typename T>
Tensor<T> chunked_forward(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t chunk, std::size_t seq_len = 0,
                          TransferCounters* counters = nullptr) {
  Tensor<T> yh = chunked_heads(p, u, chunk, seq_len, counters);
  NoGradGuard guard;
  return detail::finish_heads(p, u.detach(), yh);
}

}  // namespace basedlab
