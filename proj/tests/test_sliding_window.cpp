// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <vector>

#include "basedlab/rng.hpp"
#include "basedlab/sliding_window.hpp"
#include "oracles.hpp"

using namespace basedlab;

namespace {

oracle::Mat head_block(const oracle::Mat& m, std::size_t s0, std::size_t N, std::size_t c0, std::size_t w) {
  oracle::Mat out;
  for (std::size_t i = s0; i < s0 + N; ++i) out.emplace_back(m[i].begin() + c0, m[i].begin() + c0 + w);
  return out;
}

}  // namespace

TEST(SlidingWindow, KernelMatchesSoftmaxOracle) {
  Rng rng(1);
  const std::size_t H = 2, d = 3, N = 11;
  auto q = rng.normal_tensor({2 * N, H * d}, 1.0), k = rng.normal_tensor({2 * N, H * d}, 1.0),
       v = rng.normal_tensor({2 * N, H * d}, 1.0);
  const auto Q = oracle::to_mat(q), K = oracle::to_mat(k), V = oracle::to_mat(v);
  for (std::size_t w : {1, 2, 4, 11, 50}) {
    auto y = window_attention(q, k, v, H, N, w);
    oracle::Mat want(2 * N, std::vector<double>(H * d));
    for (std::size_t s0 = 0; s0 < 2 * N; s0 += N)
      for (std::size_t h = 0; h < H; ++h) {
        auto o = oracle::window_softmax_head(head_block(Q, s0, N, h * d, d), head_block(K, s0, N, h * d, d),
                                             head_block(V, s0, N, h * d, d), w);
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t c = 0; c < d; ++c) want[s0 + i][h * d + c] = o[i][c];
      }
    EXPECT_LT(oracle::max_abs_diff(want, y), 1e-13) << "w=" << w;
  }
}

TEST(SlidingWindow, WindowOneCopiesValues) {
  Rng rng(2);
  auto q = rng.normal_tensor({5, 4}, 1.0), k = rng.normal_tensor({5, 4}, 1.0), v = rng.normal_tensor({5, 4}, 1.0);
  EXPECT_LT(oracle::max_abs_diff(window_attention(q, k, v, 1, 5, 1), v), 1e-15);
}

TEST(SlidingWindow, RotaryMatchesOracle) {
  Rng rng(3);
  auto x = rng.normal_tensor({4, 12}, 1.0);
  std::vector<std::size_t> pos{0, 3, 17, 200};
  auto y = rotary_apply(x, pos, 2);
  const auto X = oracle::to_mat(x);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t h = 0; h < 2; ++h) {
      auto want = oracle::rotate({X[r].begin() + h * 6, X[r].begin() + h * 6 + 6}, static_cast<double>(pos[r]));
      for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(y.at(r, h * 6 + c), want[c], 1e-13);
    }
}

TEST(SlidingWindow, RotaryPreservesRelativeDots) {
  Rng rng(4);
  auto q = rng.normal_tensor({1, 8}, 1.0), k = rng.normal_tensor({1, 8}, 1.0);
  auto dot_at = [&](std::size_t a, std::size_t b) {
    std::vector<std::size_t> pa{a}, pb{b};
    auto rq = rotary_apply(q, pa), rk = rotary_apply(k, pb);
    double s = 0;
    for (std::size_t c = 0; c < 8; ++c) s += rq[c] * rk[c];
    return s;
  };
  EXPECT_NEAR(dot_at(5, 2), dot_at(105, 102), 1e-11);
}

TEST(SlidingWindow, RotaryErrors) {
  Tensor<double> x({2, 6}, 1.0);
  std::vector<std::size_t> pos{0, 1};
  EXPECT_THROW(rotary_apply(x, pos, 2), ParameterError);
  EXPECT_THROW(rotary_apply(x, pos, 4), DimensionError);
  std::vector<std::size_t> short_pos{0};
  EXPECT_THROW(rotary_apply(x, short_pos, 1), DimensionError);
  Rng rng(5);
  EXPECT_THROW(init_sliding_window<double>(8, 1, 3, 4, true, rng), ParameterError);
  EXPECT_NO_THROW(init_sliding_window<double>(8, 1, 3, 4, false, rng));
  EXPECT_THROW(window_attention(x, x, x, 1, 2, 0), ParameterError);
}

TEST(SlidingWindow, DecodeMatchesParallel) {
  for (bool rotary : {false, true}) {
    Rng rng(6);
    auto p = init_sliding_window<double>(8, 2, 4, 3, rotary, rng, 0.4);
    const std::size_t N = 9;
    auto u = rng.normal_tensor({2 * N, 8}, 1.0);
    auto ref = swa_forward(p, u, N);
    for (std::size_t s0 = 0; s0 < 2 * N; s0 += N) {
      WindowCache<double> cache(2, 4, 3);
      for (std::size_t i = 0; i < N; ++i) {
        auto y = decode_step<double>(p, cache, u.data().subspan((s0 + i) * 8, 8));
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y[c], ref.at(s0 + i, c), 1e-13);
      }
    }
  }
}

TEST(SlidingWindow, CacheEvictsOldest) {
  WindowCache<double> c(1, 2, 3);
  EXPECT_EQ(c.scalar_count(), 0u);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> k{double(t), 0}, v{0, double(t)};
    c.append(k, v);
    EXPECT_EQ(c.scalar_count(), 2u * 2 * std::min(t + 1, 3));
  }
  EXPECT_EQ(c.size(), 3u);
  EXPECT_EQ(c.oldest_position(), 2u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(c.position(e), e + 2);
    EXPECT_DOUBLE_EQ(c.key(0, e)[0], double(e + 2));
    EXPECT_DOUBLE_EQ(c.value(0, e)[1], double(e + 2));
  }
  std::vector<double> bad{1.0};
  EXPECT_THROW(c.append(bad, bad), DimensionError);
  EXPECT_THROW(WindowCache<double>(1, 2, 0), ParameterError);
}

TEST(SlidingWindow, Gradients) {
  Rng rng(7);
  auto p = init_sliding_window<double>(6, 2, 2, 3, true, rng, 0.5);
  auto u = rng.normal_tensor({2 * 5, 6}, 1.0), w = rng.normal_tensor({10, 6}, 1.0);
  EXPECT_LT(grad_check([&] { return sum(mul(swa_forward(p, u, 5), w)); }, {u, p.wq, p.wk, p.wv, p.wo}), 1e-5);
  auto x = rng.normal_tensor({3, 4}, 1.0), g = rng.normal_tensor({3, 4}, 1.0);
  std::vector<std::size_t> pos{2, 0, 9};
  EXPECT_LT(grad_check([&] { return sum(mul(rotary_apply(x, pos, 1), g)); }, {x}), 1e-7);
}
