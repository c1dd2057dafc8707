// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Naive reference implementations used as test oracles. Written directly from
// the defining formulas with plain loops, sharing no code with the library
// kernels they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "basedlab/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const basedlab::Tensor<double>& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat cols(const Mat& a, std::size_t start, std::size_t width) {
  Mat c(a.size(), std::vector<double>(width));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) c[i][j] = a[i][start + j];
  return c;
}

inline double max_abs_diff(const Mat& a, const basedlab::Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b.data()[i * b.dim(1) + j]));
  return m;
}

inline double max_abs_diff(const basedlab::Tensor<double>& a, const basedlab::Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// exp(x) to second order with x = q.k / sqrt(d').
inline double taylor_weight(const std::vector<double>& q, const std::vector<double>& k) {
  double dot = 0;
  for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * k[i];
  const double a = dot / std::sqrt(static_cast<double>(q.size()));
  return 1 + a + a * a / 2;
}

// Explicit Taylor features [1, x / d'^(1/4), vec(x x^T) / (sqrt 2 sqrt d')].
inline std::vector<double> taylor_features(const std::vector<double>& x) {
  const double dp = static_cast<double>(x.size());
  std::vector<double> f{1.0};
  for (double v : x) f.push_back(v / std::pow(dp, 0.25));
  for (double a : x)
    for (double b : x) f.push_back(a * b / (std::sqrt(2.0) * std::sqrt(dp)));
  return f;
}

// One head of causal Taylor linear attention by explicit double sums:
//   y_i = sum_{j<=i} g^(i-j) w(q_i, k_j) v_j / sum_{j<=i} g^(i-j) w(q_i, k_j)
inline Mat linear_attention_head(const Mat& q, const Mat& k, const Mat& v, double gamma = 1.0) {
  const std::size_t N = q.size(), d = v[0].size();
  Mat y(N, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < N; ++i) {
    double den = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      const double w = std::pow(gamma, static_cast<double>(i - j)) * taylor_weight(q[i], k[j]);
      den += w;
      for (std::size_t c = 0; c < d; ++c) y[i][c] += w * v[j][c];
    }
    for (auto& x : y[i]) x /= den;
  }
  return y;
}

// One head of windowed softmax attention: keys j in [i-w+1, i].
inline Mat window_softmax_head(const Mat& q, const Mat& k, const Mat& v, std::size_t w) {
  const std::size_t N = q.size(), dh = q[0].size(), d = v[0].size();
  Mat y(N, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;
    std::vector<double> s;
    for (std::size_t j = lo; j <= i; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < dh; ++c) dot += q[i][c] * k[j][c];
      s.push_back(dot / std::sqrt(static_cast<double>(dh)));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = lo; j <= i; ++j)
      for (std::size_t c = 0; c < d; ++c) y[i][c] += s[j - lo] / z * v[j][c];
  }
  return y;
}

// Rotation of pairs (2m, 2m+1) by pos * base^(-2m/d).
inline std::vector<double> rotate(const std::vector<double>& x, double pos, double base = 10000.0) {
  const std::size_t d = x.size();
  std::vector<double> y(d);
  for (std::size_t m = 0; m < d / 2; ++m) {
    const double th = pos / std::pow(base, 2.0 * static_cast<double>(m) / static_cast<double>(d));
    y[2 * m] = std::cos(th) * x[2 * m] - std::sin(th) * x[2 * m + 1];
    y[2 * m + 1] = std::sin(th) * x[2 * m] + std::cos(th) * x[2 * m + 1];
  }
  return y;
}

inline double silu(double x) { return x / (1 + std::exp(-x)); }

// out[i] = sum_{f <= i, f < F} filter[f] * u[i - f], per channel.
inline Mat causal_conv(const Mat& u, const Mat& filter) {
  Mat y(u.size(), std::vector<double>(u[0].size(), 0.0));
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t f = 0; f < filter.size() && f <= i; ++f)
      for (std::size_t c = 0; c < u[0].size(); ++c) y[i][c] += filter[f][c] * u[i - f][c];
  return y;
}

}  // namespace oracle
