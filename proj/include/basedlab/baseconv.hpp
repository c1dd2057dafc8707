// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// BaseConv gated convolutions.
//
//   minimal: z = (u W + B_B) (.) (K * u + B_K)        K, B_B, B_K are N x d
//   gated:   y = ((u W1 + b1) (.) silu(h * (u W2) + b2)) W3 + b3
//
// The gated filter h is short (F taps) and acts on the projected stream of
// width c*d, so decoding only needs the last F-1 projected rows.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "basedlab/errors.hpp"
#include "basedlab/rng.hpp"
#include "basedlab/tensor.hpp"

namespace basedlab {

template <typename T = double>
struct BaseConvMinimalParams {
  Tensor<T> w;       // d x d
  Tensor<T> bias_b;  // N x d
  Tensor<T> filter;  // N x d (F <= N taps)
  Tensor<T> bias_k;  // N x d
};

template <typename T = double>
struct BaseConvGatedParams {
  Tensor<T> w1, w2;  // d x (c*d)
  Tensor<T> w3;      // (c*d) x d
  Tensor<T> b1, b2;  // c*d
  Tensor<T> b3;      // d
  Tensor<T> filter;  // F x (c*d)

  std::size_t d_model() const { return w1.dim(0); }
  std::size_t width() const { return w1.dim(1); }
  std::size_t taps() const { return filter.dim(0); }
};

template <typename T>
void validate(const BaseConvMinimalParams<T>& p, const Tensor<T>& u) {
  detail::require_rank2(u, "baseconv_minimal");
  const std::size_t N = u.dim(0), d = u.dim(1);
  if (p.w.shape() != Shape{d, d} || p.bias_b.shape() != Shape{N, d} || p.bias_k.shape() != Shape{N, d} ||
      p.filter.rank() != 2 || p.filter.dim(1) != d) {
    throw DimensionError("baseconv_minimal: parameter shapes do not match input " + shape_str(u.shape()));
  }
}

template <typename T>
void validate(const BaseConvGatedParams<T>& p) {
  const std::size_t d = p.w1.dim(0), cd = p.w1.dim(1);
  if (p.w2.shape() != Shape{d, cd} || p.w3.shape() != Shape{cd, d} || p.b1.size() != cd || p.b2.size() != cd ||
      p.b3.size() != d || p.filter.rank() != 2 || p.filter.dim(1) != cd) {
    throw DimensionError("baseconv_gated: inconsistent parameter shapes");
  }
}

template <typename T = double>
BaseConvGatedParams<T> init_baseconv(std::size_t d_model, std::size_t expansion, std::size_t taps, Rng& rng,
                                     double stddev = 0.02) {
  if (expansion < 1 || taps < 1) throw ParameterError("baseconv needs expansion >= 1 and filter taps >= 1");
  const std::size_t cd = expansion * d_model;
  BaseConvGatedParams<T> p;
  p.w1 = rng.normal_tensor<T>({d_model, cd}, stddev);
  p.w2 = rng.normal_tensor<T>({d_model, cd}, stddev);
  p.w3 = rng.normal_tensor<T>({cd, d_model}, stddev);
  p.b1 = Tensor<T>::zeros({cd});
  p.b2 = Tensor<T>::zeros({cd});
  p.b3 = Tensor<T>::zeros({d_model});
  p.filter = rng.normal_tensor<T>({taps, cd}, stddev);
  return p;
}

template <typename T>
Tensor<T> forward_minimal(const BaseConvMinimalParams<T>& p, const Tensor<T>& u) {
  validate(p, u);
  Tensor<T> lin = add(matmul(u, p.w), p.bias_b);
  Tensor<T> conv = add(causal_conv1d(u, p.filter), p.bias_k);
  return mul(lin, conv);
}

template <typename T>
Tensor<T> forward_gated(const BaseConvGatedParams<T>& p, const Tensor<T>& u, std::size_t seq_len = 0) {
  validate(p);
  detail::require_rank2(u, "baseconv_gated");
  if (u.dim(1) != p.d_model()) throw DimensionError("baseconv_gated: input width " + std::to_string(u.dim(1)));
  Tensor<T> gate = add_bias(matmul(u, p.w1), p.b1);
  Tensor<T> conv = silu(add_bias(causal_conv1d(matmul(u, p.w2), p.filter, seq_len), p.b2));
  return add_bias(matmul(mul(gate, conv), p.w3), p.b3);
}

// Token-at-a-time gated BaseConv holding the last min(t, F-1) rows of u W2.
template <typename T = double>
class BaseConvDecoder {
 public:
  BaseConvDecoder() = default;
  explicit BaseConvDecoder(const BaseConvGatedParams<T>& p) : params_(&p) { validate(p); }

  std::vector<T> step(std::span<const T> u) {
    const auto& p = *params_;
    const std::size_t cd = p.width(), F = p.taps();
    auto gate = detail::vecmat<T>(u, p.w1);
    auto proj = detail::vecmat<T>(u, p.w2);
    std::vector<T> conv(cd, T(0));
    auto f = p.filter.data();
    // Same per-channel accumulation order as causal_conv1d: tap 0 first.
    for (std::size_t c = 0; c < cd; ++c) conv[c] += f[c] * proj[c];
    for (std::size_t tap = 1; tap < F && tap <= tail_.size(); ++tap) {
      const auto& row = tail_[tail_.size() - tap];
      for (std::size_t c = 0; c < cd; ++c) conv[c] += f[tap * cd + c] * row[c];
    }
    std::vector<T> mixed(cd);
    for (std::size_t c = 0; c < cd; ++c) {
      const T x = conv[c] + p.b2[c];
      mixed[c] = (gate[c] + p.b1[c]) * (x / (T(1) + std::exp(-x)));
    }
    if (F > 1) {
      tail_.push_back(std::move(proj));
      if (tail_.size() > F - 1) tail_.pop_front();
    }
    auto y = detail::vecmat<T>(mixed, p.w3);
    for (std::size_t c = 0; c < y.size(); ++c) y[c] += p.b3[c];
    return y;
  }

  std::size_t scalar_count() const { return tail_.size() * (params_ ? params_->width() : 0); }

 private:
  const BaseConvGatedParams<T>* params_ = nullptr;
  std::deque<std::vector<T>> tail_;
};

}  // namespace basedlab
