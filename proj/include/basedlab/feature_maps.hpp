// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Feature maps phi for linear attention.
//
// The second-order Taylor map lays each row out as
//   [ 1 | x / d'^(1/4) | vec(x (x) x) / (sqrt(2) sqrt(d')) ]
// so that phi(q) . phi(k) = 1 + (q.k)/sqrt(d') + (q.k)^2 / (2 d'), the
// truncated expansion of exp(q.k / sqrt(d')). The full outer product is
// materialized (D = 1 + d' + d'^2). A packed layout keeps only the unique
// monomials x_i x_j (i <= j) and folds the off-diagonal multiplicity into the
// query side, giving the same dot products with 1 + d' + d'(d'+1)/2 features.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "basedlab/errors.hpp"
#include "basedlab/tensor.hpp"

namespace basedlab {

enum class FeatureMapKind { TaylorExp2, PosELU, ReLU, Square, Identity };

enum class FeatureLayout { Full, Packed };

// Packed Taylor features are asymmetric: the query side carries the factor 2
// for off-diagonal monomials.
enum class FeatureRole { Query, Key };

struct FeatureMap {
  FeatureMapKind kind = FeatureMapKind::TaylorExp2;
  std::size_t d_prime = 16;
};

struct DimReport {
  std::size_t materialized = 0;
  std::size_t unique = 0;
  std::size_t padded = 0;
};

inline std::string to_string(FeatureMapKind kind) {
  switch (kind) {
    case FeatureMapKind::TaylorExp2: return "taylor";
    case FeatureMapKind::PosELU: return "pos_elu";
    case FeatureMapKind::ReLU: return "relu";
    case FeatureMapKind::Square: return "square";
    case FeatureMapKind::Identity: return "identity";
  }
  return "unknown";
}

inline FeatureMapKind feature_map_kind_from_string(const std::string& name) {
  if (name == "taylor") return FeatureMapKind::TaylorExp2;
  if (name == "pos_elu") return FeatureMapKind::PosELU;
  if (name == "relu") return FeatureMapKind::ReLU;
  if (name == "square") return FeatureMapKind::Square;
  if (name == "identity") return FeatureMapKind::Identity;
  throw ConfigError("unknown feature map '" + name + "'");
}

inline void validate(const FeatureMap& map) {
  if (map.d_prime < 1) throw ParameterError("feature map input dimension must be >= 1");
}

inline std::size_t taylor_materialized(std::size_t dp) { return 1 + dp + dp * dp; }
inline std::size_t taylor_unique(std::size_t dp) { return 1 + dp + dp * (dp + 1) / 2; }

// Output width D of the map under the given layout.
inline std::size_t feature_dim(const FeatureMap& map, FeatureLayout layout = FeatureLayout::Full) {
  validate(map);
  if (map.kind != FeatureMapKind::TaylorExp2) return map.d_prime;
  return layout == FeatureLayout::Full ? taylor_materialized(map.d_prime) : taylor_unique(map.d_prime);
}

inline DimReport dims(const FeatureMap& map, std::size_t tile) {
  if (tile < 1) throw ParameterError("dims: tile must be >= 1");
  DimReport r;
  r.materialized = feature_dim(map, FeatureLayout::Full);
  r.unique = feature_dim(map, FeatureLayout::Packed);
  r.padded = (r.materialized + tile - 1) / tile * tile;
  return r;
}

namespace detail {

template <typename T>
struct TaylorScales {
  T lin;   // 1 / d'^(1/4)
  T quad;  // 1 / (sqrt(2) sqrt(d'))
  explicit TaylorScales(std::size_t dp)
      : lin(T(1) / std::sqrt(std::sqrt(static_cast<T>(dp)))),
        quad(T(1) / (std::sqrt(T(2)) * std::sqrt(static_cast<T>(dp)))) {}
};

template <typename T>
void check_finite(std::span<const T> x) {
  for (T v : x) {
    if (!std::isfinite(v)) throw NumericError("feature map input contains a non-finite value");
  }
}

}  // namespace detail

// Featurizes one row x (length d') into `out` (length D, full layout).
template <typename T>
void featurize(const FeatureMap& map, std::span<const T> x, std::span<T> out) {
  const std::size_t dp = map.d_prime;
  switch (map.kind) {
    case FeatureMapKind::TaylorExp2: {
      const detail::TaylorScales<T> s(dp);
      out[0] = T(1);
      for (std::size_t i = 0; i < dp; ++i) out[1 + i] = x[i] * s.lin;
      T* q = out.data() + 1 + dp;
      for (std::size_t i = 0; i < dp; ++i)
        for (std::size_t j = 0; j < dp; ++j) q[i * dp + j] = x[i] * x[j] * s.quad;
      break;
    }
    case FeatureMapKind::PosELU:
      for (std::size_t i = 0; i < dp; ++i) out[i] = x[i] > T(0) ? x[i] + T(1) : std::exp(x[i]);
      break;
    case FeatureMapKind::ReLU:
      for (std::size_t i = 0; i < dp; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case FeatureMapKind::Square:
      for (std::size_t i = 0; i < dp; ++i) out[i] = x[i] * x[i];
      break;
    case FeatureMapKind::Identity:
      for (std::size_t i = 0; i < dp; ++i) out[i] = x[i];
      break;
  }
}

// Packed layout: unique Taylor monomials only. Non-Taylor maps are unchanged.
template <typename T>
void featurize_packed(const FeatureMap& map, std::span<const T> x, FeatureRole role, std::span<T> out) {
  if (map.kind != FeatureMapKind::TaylorExp2) {
    featurize(map, x, out);
    return;
  }
  const std::size_t dp = map.d_prime;
  const detail::TaylorScales<T> s(dp);
  out[0] = T(1);
  for (std::size_t i = 0; i < dp; ++i) out[1 + i] = x[i] * s.lin;
  std::size_t k = 1 + dp;
  const T off = role == FeatureRole::Query ? T(2) : T(1);
  for (std::size_t i = 0; i < dp; ++i) {
    out[k++] = x[i] * x[i] * s.quad;
    for (std::size_t j = i + 1; j < dp; ++j) out[k++] = off * x[i] * x[j] * s.quad;
  }
}

template <typename T>
std::vector<T> featurize(const FeatureMap& map, std::span<const T> x, FeatureLayout layout = FeatureLayout::Full,
                         FeatureRole role = FeatureRole::Key) {
  std::vector<T> out(feature_dim(map, layout));
  if (layout == FeatureLayout::Full) {
    featurize<T>(map, x, out);
  } else {
    featurize_packed<T>(map, x, role, out);
  }
  return out;
}

// Differentiable map over [R x (heads*d')] -> [R x (heads*D)], each head's
// d'-wide block featurized independently.
template <typename T>
Tensor<T> apply(const FeatureMap& map, const Tensor<T>& x, std::size_t heads = 1) {
  validate(map);
  detail::require_rank2(x, "feature_map");
  const std::size_t dp = map.d_prime;
  if (heads == 0 || x.dim(1) != heads * dp) {
    throw DimensionError("feature_map: input " + shape_str(x.shape()) + " is not " + std::to_string(heads) +
                         " heads of width " + std::to_string(dp));
  }
  detail::check_finite(x.data());
  const std::size_t rows = x.dim(0);
  const std::size_t D = feature_dim(map);
  std::vector<T> y(rows * heads * D);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < heads; ++h)
      featurize<T>(map, x.data().subspan(r * heads * dp + h * dp, dp),
                   std::span<T>(y.data() + (r * heads + h) * D, D));
  return detail::record<T>({rows, heads * D}, std::move(y), {x}, "feature_map",
                           [map, rows, heads, dp, D](Node<T>& out) {
                             auto& in = *out.parents[0];
                             if (!in.requires_grad) return;
                             auto& g = in.grad_buffer();
                             const detail::TaylorScales<T> s(dp);
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t h = 0; h < heads; ++h) {
                                 const T* x = in.data.data() + r * heads * dp + h * dp;
                                 const T* go = out.grad.data() + (r * heads + h) * D;
                                 const T* yo = out.data.data() + (r * heads + h) * D;
                                 T* gx = g.data() + r * heads * dp + h * dp;
                                 switch (map.kind) {
                                   case FeatureMapKind::TaylorExp2: {
                                     const T* gq = go + 1 + dp;
                                     for (std::size_t i = 0; i < dp; ++i) {
                                       T acc = go[1 + i] * s.lin;
                                       for (std::size_t j = 0; j < dp; ++j)
                                         acc += (gq[i * dp + j] + gq[j * dp + i]) * x[j] * s.quad;
                                       gx[i] += acc;
                                     }
                                     break;
                                   }
                                   case FeatureMapKind::PosELU:
                                     for (std::size_t i = 0; i < dp; ++i) gx[i] += go[i] * (x[i] > T(0) ? T(1) : yo[i]);
                                     break;
                                   case FeatureMapKind::ReLU:
                                     for (std::size_t i = 0; i < dp; ++i) gx[i] += x[i] > T(0) ? go[i] : T(0);
                                     break;
                                   case FeatureMapKind::Square:
                                     for (std::size_t i = 0; i < dp; ++i) gx[i] += T(2) * x[i] * go[i];
                                     break;
                                   case FeatureMapKind::Identity:
                                     for (std::size_t i = 0; i < dp; ++i) gx[i] += go[i];
                                     break;
                                 }
                               }
                             }
                           });
}

// Closed form of phi(q) . phi(k) for the Taylor map.
template <typename T>
T taylor_kernel(T qk_dot, std::size_t d_prime) {
  const T a = qk_dot / std::sqrt(static_cast<T>(d_prime));
  return T(1) + a + a * a / T(2);
}

}  // namespace basedlab
