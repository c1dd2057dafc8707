// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force oracles for the constructive recall results: the multilinear
// MQAR polynomial, p-hot token encodings with the block-exclusive equality
// polynomial, and the exact attention + ReLU MQAR construction.
//
// Inputs here use the (key, value, query) triple layout, not the
// pairs-then-queries layout of the training task.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "basedlab/errors.hpp"

namespace basedlab::theory {

class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  // Bit r*cols + k of `mask` becomes entry (r, k).
  static BitMatrix from_mask(std::size_t rows, std::size_t cols, std::uint64_t mask) {
    BitMatrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) m.bits_[i] = static_cast<std::uint8_t>((mask >> i) & 1u);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  int at(std::size_t r, std::size_t k) const {
    check(r, k);
    return bits_[r * cols_ + k];
  }
  void set(std::size_t r, std::size_t k, int v) {
    check(r, k);
    if (v != 0 && v != 1) throw EncodingError("BitMatrix entries must be 0 or 1");
    bits_[r * cols_ + k] = static_cast<std::uint8_t>(v);
  }
  std::vector<int> row(std::size_t r) const {
    std::vector<int> out(cols_);
    for (std::size_t k = 0; k < cols_; ++k) out[k] = at(r, k);
    return out;
  }

 private:
  void check(std::size_t r, std::size_t k) const {
    if (r >= rows_ || k >= cols_) {
      throw BoundsError("BitMatrix index (" + std::to_string(r) + ", " + std::to_string(k) + ") outside " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// ---------------------------------------------------------------------------
// Exact integer polynomials. A monomial is a sorted list of variable ids with
// repetition, so x*x stays distinguishable from x.

class Poly {
 public:
  using Monomial = std::vector<int>;

  Poly() = default;
  static Poly constant(long long c) {
    Poly p;
    if (c) p.terms_[{}] = c;
    return p;
  }
  static Poly var(int id) {
    Poly p;
    p.terms_[{id}] = 1;
    return p;
  }

  const std::map<Monomial, long long>& terms() const { return terms_; }

  Poly operator+(const Poly& o) const {
    Poly r = *this;
    for (const auto& [m, c] : o.terms_) r.add(m, c);
    return r;
  }
  Poly operator-(const Poly& o) const {
    Poly r = *this;
    for (const auto& [m, c] : o.terms_) r.add(m, -c);
    return r;
  }
  Poly operator*(const Poly& o) const {
    Poly r;
    for (const auto& [a, ca] : terms_) {
      for (const auto& [b, cb] : o.terms_) {
        Monomial m;
        m.reserve(a.size() + b.size());
        std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(m));
        r.add(m, ca * cb);
      }
    }
    return r;
  }

  std::size_t degree() const {
    std::size_t d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, m.size());
    return d;
  }

  bool multilinear() const {
    for (const auto& [m, c] : terms_) {
      if (std::adjacent_find(m.begin(), m.end()) != m.end()) return false;
    }
    return true;
  }

  // No monomial holds two variables of the same block.
  template <typename BlockOf>
  bool block_exclusive(BlockOf block_of) const {
    for (const auto& [m, c] : terms_) {
      std::vector<int> blocks;
      for (int v : m) blocks.push_back(block_of(v));
      std::sort(blocks.begin(), blocks.end());
      if (std::adjacent_find(blocks.begin(), blocks.end()) != blocks.end()) return false;
    }
    return true;
  }

  template <typename Value>
  long long evaluate(Value value) const {
    long long s = 0;
    for (const auto& [m, c] : terms_) {
      long long t = c;
      for (int v : m) t *= value(v);
      s += t;
    }
    return s;
  }

 private:
  void add(const Monomial& m, long long c) {
    auto it = terms_.find(m);
    if (it == terms_.end()) {
      if (c) terms_.emplace(m, c);
      return;
    }
    it->second += c;
    if (it->second == 0) terms_.erase(it);
  }

  std::map<Monomial, long long> terms_;
};

// ---------------------------------------------------------------------------
// MQAR polynomial
//
//   z_k = prod_m [u_im u_jm + (1 - u_im)(1 - u_jm)] * u_{j+1,k}
//
// Row i is the query, row j the key, row j+1 the value that follows it.

inline void check_mqar_rows(std::size_t rows, std::size_t i, std::size_t j) {
  if (i >= rows || j + 1 >= rows) {
    throw BoundsError("mqar_poly: rows i=" + std::to_string(i) + ", j=" + std::to_string(j) + " and j+1 must be < " +
                      std::to_string(rows));
  }
  if (i <= j) throw BoundsError("mqar_poly: the query row must follow the key row (i > j)");
}

inline std::vector<int> mqar_poly(const BitMatrix& u, std::size_t i, std::size_t j) {
  check_mqar_rows(u.rows(), i, j);
  int y = 1;
  for (std::size_t m = 0; m < u.cols(); ++m) {
    const int a = u.at(i, m), b = u.at(j, m);
    y *= a * b + (1 - a) * (1 - b);
  }
  std::vector<int> z(u.cols());
  for (std::size_t k = 0; k < u.cols(); ++k) z[k] = y * u.at(j + 1, k);
  return z;
}

// Variable id of entry (r, k) is r * d + k.
inline std::vector<Poly> mqar_poly_symbolic(std::size_t rows, std::size_t d, std::size_t i, std::size_t j) {
  check_mqar_rows(rows, i, j);
  auto u = [&](std::size_t r, std::size_t k) { return Poly::var(static_cast<int>(r * d + k)); };
  Poly y = Poly::constant(1);
  for (std::size_t m = 0; m < d; ++m) {
    const Poly one = Poly::constant(1);
    y = y * (u(i, m) * u(j, m) + (one - u(i, m)) * (one - u(j, m)));
  }
  std::vector<Poly> z;
  for (std::size_t k = 0; k < d; ++k) z.push_back(y * u(j + 1, k));
  return z;
}

// ---------------------------------------------------------------------------
// p-hot encodings

// Integer r with r^p == c, else ParameterError.
inline std::size_t phot_root(std::size_t p, std::size_t c) {
  if (p == 0 || c == 0) throw ParameterError("p-hot encoding needs p >= 1 and c >= 1");
  for (std::size_t r = 1;; ++r) {
    std::size_t pw = 1;
    for (std::size_t i = 0; i < p && pw <= c; ++i) pw *= r;
    if (pw == c) return r;
    if (pw > c) break;
  }
  throw ParameterError("c = " + std::to_string(c) + " has no integral " + std::to_string(p) + "-th root");
}

// Base-r digits of t, most significant first.
inline std::vector<std::size_t> phot_digits(std::size_t t, std::size_t p, std::size_t c) {
  const std::size_t r = phot_root(p, c);
  if (t >= c) throw BoundsError("token " + std::to_string(t) + " outside vocabulary of " + std::to_string(c));
  std::vector<std::size_t> dg(p);
  for (std::size_t i = p; i-- > 0;) {
    dg[i] = t % r;
    t /= r;
  }
  return dg;
}

inline std::vector<int> phot_encode(std::size_t t, std::size_t p, std::size_t c) {
  const std::size_t r = phot_root(p, c);
  const auto dg = phot_digits(t, p, c);
  std::vector<int> bits(p * r, 0);
  for (std::size_t b = 0; b < p; ++b) bits[b * r + dg[b]] = 1;
  return bits;
}

// One-hot blocks with their last bit dropped: digit r-1 is the all-zero block.
inline std::vector<int> almost_phot_encode(std::size_t t, std::size_t p, std::size_t c) {
  const std::size_t r = phot_root(p, c);
  const auto dg = phot_digits(t, p, c);
  std::vector<int> bits(p * (r - 1), 0);
  for (std::size_t b = 0; b < p; ++b)
    if (dg[b] + 1 < r) bits[b * (r - 1) + dg[b]] = 1;
  return bits;
}

namespace detail {

// Index of the set bit in each block, or `width` for an all-zero block.
inline std::vector<std::size_t> block_hits(const std::vector<int>& bits, std::size_t p) {
  if (p == 0 || bits.size() % p != 0) {
    throw EncodingError("encoding of length " + std::to_string(bits.size()) + " does not split into " +
                        std::to_string(p) + " blocks");
  }
  const std::size_t w = bits.size() / p;
  std::vector<std::size_t> hit(p, w);
  for (std::size_t b = 0; b < p; ++b) {
    for (std::size_t k = 0; k < w; ++k) {
      const int v = bits[b * w + k];
      if (v != 0 && v != 1) throw EncodingError("encoding entries must be 0 or 1");
      if (!v) continue;
      if (hit[b] != w) throw EncodingError("block " + std::to_string(b) + " has more than one set bit");
      hit[b] = k;
    }
  }
  return hit;
}

}  // namespace detail

inline std::size_t phot_decode(const std::vector<int>& bits, std::size_t p, std::size_t c) {
  const std::size_t r = phot_root(p, c);
  if (bits.size() != p * r) throw EncodingError("p-hot encoding must have length p * c^(1/p)");
  std::size_t t = 0;
  for (std::size_t h : detail::block_hits(bits, p)) {
    if (h == r) throw EncodingError("p-hot block with no set bit");
    t = t * r + h;
  }
  return t;
}

inline std::size_t almost_phot_decode(const std::vector<int>& bits, std::size_t p, std::size_t c) {
  const std::size_t r = phot_root(p, c);
  if (bits.size() != p * (r - 1)) throw EncodingError("almost p-hot encoding must have length p * (c^(1/p) - 1)");
  std::size_t t = 0;
  for (std::size_t h : detail::block_hits(bits, p)) t = t * r + h;
  return t;
}

// P = prod_j [sum_k u1_jk u2_jk + (1 - sum_k u1_jk)(1 - sum_k u2_jk)]
inline int eq_phot_poly(const std::vector<int>& u1, const std::vector<int>& u2, std::size_t p) {
  if (u1.size() != u2.size()) throw EncodingError("eq_phot_poly: encodings differ in length");
  detail::block_hits(u1, p);
  detail::block_hits(u2, p);
  const std::size_t w = u1.size() / p;
  int prod = 1;
  for (std::size_t j = 0; j < p; ++j) {
    int dot = 0, s1 = 0, s2 = 0;
    for (std::size_t k = 0; k < w; ++k) {
      dot += u1[j * w + k] * u2[j * w + k];
      s1 += u1[j * w + k];
      s2 += u2[j * w + k];
    }
    prod *= dot + (1 - s1) * (1 - s2);
  }
  return prod;
}

// Variables: u1 block j bit k is j*w + k, u2 block j bit k is (p + j)*w + k,
// so id / w names the block.
inline Poly eq_phot_symbolic(std::size_t p, std::size_t w) {
  Poly prod = Poly::constant(1);
  for (std::size_t j = 0; j < p; ++j) {
    Poly dot, s1, s2;
    for (std::size_t k = 0; k < w; ++k) {
      const Poly a = Poly::var(static_cast<int>(j * w + k)), b = Poly::var(static_cast<int>((p + j) * w + k));
      dot = dot + a * b;
      s1 = s1 + a;
      s2 = s2 + b;
    }
    const Poly one = Poly::constant(1);
    prod = prod * (dot + (one - s1) * (one - s2));
  }
  return prod;
}

// ---------------------------------------------------------------------------
// Attention + ReLU MQAR construction on a (3N x d) triple layout.

using IntMatrix = std::vector<std::vector<long long>>;

inline IntMatrix int_matmul(const IntMatrix& a, const IntMatrix& b) {
  const std::size_t n = a.size(), m = b.empty() ? 0 : b[0].size(), inner = b.size();
  IntMatrix c(n, std::vector<long long>(m, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < inner; ++k)
      if (a[i][k])
        for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

struct ExactAttentionResult {
  IntMatrix z;       // match indicator, 3N x 3N
  IntMatrix select;  // first-match selector, 3N x 3N
  IntMatrix out;     // selector times V, 3N x d, entries in {-1, 0, 1}
  // Per triple t: value bits of the first key matching q_t, if any.
  std::vector<std::optional<std::vector<int>>> predictions;
};

inline ExactAttentionResult exact_attention_mqar(const BitMatrix& u) {
  const std::size_t L = u.rows(), d = u.cols();
  if (L % 3 != 0) throw DimensionError("exact_attention_mqar: rows must be 3N (key, value, query triples)");
  auto w = [&](std::size_t r, std::size_t k) { return 2LL * u.at(r, k) - 1; };
  IntMatrix Q(L, std::vector<long long>(d, 0)), K = Q, V = Q;
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      if (i % 3 == 0) {
        K[i][k] = w(i, k);
        V[i][k] = w(i + 1, k);
      }
      if (i % 3 == 2) Q[i][k] = w(i, k);
    }
  }
  ExactAttentionResult r;
  // Z = ReLU(QK^T - d + 1) on causal positions j < i.
  r.z.assign(L, std::vector<long long>(L, 0));
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      long long s = 0;
      for (std::size_t k = 0; k < d; ++k) s += Q[i][k] * K[j][k];
      r.z[i][j] = std::max(0LL, s - static_cast<long long>(d) + 1);
    }
  }
  IntMatrix W1(L, std::vector<long long>(L, 0)), W2 = W1, W3 = W1;
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t j = 0; j < L; ++j) {
      W1[k][j] = k >= j ? 1 : 0;
      W2[k][j] = (k == j ? 1 : 0) - (k == 0 ? 1 : 0);
      W3[k][j] = (k == j ? 1 : 0) - (k == j + 1 ? 1 : 0);
    }
  }
  IntMatrix zp = int_matmul(int_matmul(r.z, W1), W2);
  for (auto& row : zp)
    for (auto& x : row) x = std::max(0LL, x + 1);
  r.select = int_matmul(zp, W3);
  r.out = int_matmul(r.select, V);
  for (std::size_t t = 0; t < L / 3; ++t) {
    const std::size_t i = 3 * t + 2;
    bool any = false;
    for (std::size_t j = 0; j < i; ++j) any = any || r.z[i][j] != 0;
    if (!any) {
      r.predictions.emplace_back(std::nullopt);
      continue;
    }
    std::vector<int> bits(d);
    for (std::size_t k = 0; k < d; ++k) bits[k] = static_cast<int>((r.out[i][k] + 1) / 2);
    r.predictions.emplace_back(std::move(bits));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Exhaustive checks

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t mismatches = 0;
  bool passed() const { return mismatches == 0 && instances > 0; }
};

// Every (i > j) pair on every 2^(rows*d) input against equality-then-copy.
inline CheckResult check_mqar_poly(std::size_t rows = 6, std::size_t d = 2) {
  CheckResult c{"mqar_poly exhaustive d=" + std::to_string(d) + " rows=" + std::to_string(rows)};
  for (std::uint64_t mask = 0; mask < (1ULL << (rows * d)); ++mask) {
    const auto u = BitMatrix::from_mask(rows, d, mask);
    for (std::size_t j = 0; j + 1 < rows; ++j) {
      for (std::size_t i = j + 1; i < rows; ++i) {
        std::vector<int> want(d, 0);
        if (u.row(i) == u.row(j)) want = u.row(j + 1);
        ++c.instances;
        if (mqar_poly(u, i, j) != want) ++c.mismatches;
      }
    }
  }
  return c;
}

// Expanded polynomial is multilinear of degree exactly 2d + 1 and agrees with
// the numeric form on all inputs. Query row 2, key row 0, value row 1.
inline CheckResult check_mqar_degree(std::size_t max_d = 3) {
  CheckResult c{"mqar_poly degree 2d+1, d<=" + std::to_string(max_d)};
  for (std::size_t d = 1; d <= max_d; ++d) {
    const auto z = mqar_poly_symbolic(3, d, 2, 0);
    for (std::size_t k = 0; k < d; ++k) {
      ++c.instances;
      if (z[k].degree() != 2 * d + 1 || !z[k].multilinear()) ++c.mismatches;
    }
    for (std::uint64_t mask = 0; mask < (1ULL << (3 * d)); ++mask) {
      const auto u = BitMatrix::from_mask(3, d, mask);
      const auto num = mqar_poly(u, 2, 0);
      for (std::size_t k = 0; k < d; ++k) {
        ++c.instances;
        const long long v = z[k].evaluate([&](int id) { return u.at(id / d, id % d); });
        if (v != num[k]) ++c.mismatches;
      }
    }
  }
  return c;
}

inline CheckResult check_phot_roundtrip() {
  CheckResult c{"p-hot round trip (2,16) (3,27)"};
  for (auto [p, cc] : {std::pair<std::size_t, std::size_t>{2, 16}, {3, 27}}) {
    for (std::size_t t = 0; t < cc; ++t) {
      const auto e = phot_encode(t, p, cc);
      c.instances += 2;
      if (phot_decode(e, p, cc) != t || std::count(e.begin(), e.end(), 1) != static_cast<long>(p)) ++c.mismatches;
      if (almost_phot_decode(almost_phot_encode(t, p, cc), p, cc) != t) ++c.mismatches;
    }
  }
  return c;
}

// All c x c token pairs, in both the p-hot and almost p-hot encodings.
inline CheckResult check_eq_phot(std::size_t p = 2, std::size_t cc = 9) {
  CheckResult c{"eq_phot_poly exhaustive p=" + std::to_string(p) + " c=" + std::to_string(cc)};
  for (std::size_t a = 0; a < cc; ++a) {
    for (std::size_t b = 0; b < cc; ++b) {
      const int want = a == b ? 1 : 0;
      c.instances += 2;
      if (eq_phot_poly(phot_encode(a, p, cc), phot_encode(b, p, cc), p) != want) ++c.mismatches;
      if (eq_phot_poly(almost_phot_encode(a, p, cc), almost_phot_encode(b, p, cc), p) != want) ++c.mismatches;
    }
  }
  return c;
}

// Block-exclusive of degree exactly 2p for block width 2 (c = 3^p, almost p-hot).
inline CheckResult check_eq_degree(std::size_t max_p = 3) {
  CheckResult c{"eq_phot_poly block-exclusive degree 2p, p<=" + std::to_string(max_p)};
  const std::size_t w = 2;
  for (std::size_t p = 1; p <= max_p; ++p) {
    const Poly P = eq_phot_symbolic(p, w);
    ++c.instances;
    if (P.degree() != 2 * p || !P.multilinear() || !P.block_exclusive([&](int id) { return id / static_cast<int>(w); })) {
      ++c.mismatches;
    }
  }
  return c;
}

// Every Boolean (3N x d) input against a direct first-match oracle, and Z
// against the match indicator.
inline CheckResult check_exact_attention(std::size_t n = 2, std::size_t d = 2) {
  CheckResult c{"exact_attention_mqar exhaustive d=" + std::to_string(d) + " N=" + std::to_string(n)};
  const std::size_t L = 3 * n;
  for (std::uint64_t mask = 0; mask < (1ULL << (L * d)); ++mask) {
    const auto u = BitMatrix::from_mask(L, d, mask);
    const auto r = exact_attention_mqar(u);
    ++c.instances;
    bool ok = true;
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        const bool match = i % 3 == 2 && j % 3 == 0 && j < i && u.row(i) == u.row(j);
        ok = ok && r.z[i][j] == (match ? 1 : 0);
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      const auto q = u.row(3 * t + 2);
      std::optional<std::vector<int>> want;
      for (std::size_t s = 0; s <= t && !want; ++s)
        if (u.row(3 * s) == q) want = u.row(3 * s + 1);
      ok = ok && r.predictions[t] == want;
      for (std::size_t k = 0; k < d; ++k) {
        const long long expect = want ? 2LL * (*want)[k] - 1 : 0;
        ok = ok && r.out[3 * t + 2][k] == expect;
      }
    }
    if (!ok) ++c.mismatches;
  }
  return c;
}

inline std::vector<CheckResult> verify() {
  return {check_mqar_poly(), check_mqar_degree(), check_phot_roundtrip(),
          check_eq_phot(),   check_eq_degree(),   check_exact_attention()};
}

}  // namespace basedlab::theory
