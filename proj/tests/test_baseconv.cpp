// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <vector>

#include "basedlab/baseconv.hpp"
#include "basedlab/rng.hpp"
#include "oracles.hpp"

using namespace basedlab;

TEST(BaseConv, MinimalFormIsQuadraticInInput) {
  Rng rng(1);
  const std::size_t N = 8, d = 4;
  BaseConvMinimalParams<double> p{rng.normal_tensor({d, d}, 1.0), Tensor<double>::zeros({N, d}),
                                  rng.normal_tensor({N, d}, 1.0), Tensor<double>::zeros({N, d})};
  auto u = rng.normal_tensor({N, d}, 1.0);
  auto y1 = forward_minimal(p, u), y2 = forward_minimal(p, scale(u, 2.0));
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y2[i], 4 * y1[i], 1e-10 * (1 + std::abs(y1[i])));
}

TEST(BaseConv, MinimalFormMatchesDefinition) {
  Rng rng(2);
  const std::size_t N = 6, d = 3;
  BaseConvMinimalParams<double> p{rng.normal_tensor({d, d}, 1.0), rng.normal_tensor({N, d}, 1.0),
                                  rng.normal_tensor({N, d}, 1.0), rng.normal_tensor({N, d}, 1.0)};
  auto u = rng.normal_tensor({N, d}, 1.0);
  auto lin = oracle::matmul(oracle::to_mat(u), oracle::to_mat(p.w));
  auto conv = oracle::causal_conv(oracle::to_mat(u), oracle::to_mat(p.filter));
  const auto bb = oracle::to_mat(p.bias_b), bk = oracle::to_mat(p.bias_k);
  oracle::Mat want(N, std::vector<double>(d));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < d; ++c) want[i][c] = (lin[i][c] + bb[i][c]) * (conv[i][c] + bk[i][c]);
  EXPECT_LT(oracle::max_abs_diff(want, forward_minimal(p, u)), 1e-12);
  EXPECT_THROW(forward_minimal(p, rng.normal_tensor({N + 1, d}, 1.0)), DimensionError);
}

TEST(BaseConv, GatedMatchesDefinition) {
  Rng rng(3);
  auto p = init_baseconv<double>(4, 2, 3, rng, 0.5);
  p.b1 = rng.normal_tensor({8}, 0.3);
  p.b2 = rng.normal_tensor({8}, 0.3);
  p.b3 = rng.normal_tensor({4}, 0.3);
  const std::size_t N = 7;
  auto u = rng.normal_tensor({2 * N, 4}, 1.0);
  const auto U = oracle::to_mat(u);
  auto gate = oracle::matmul(U, oracle::to_mat(p.w1)), proj = oracle::matmul(U, oracle::to_mat(p.w2));
  oracle::Mat mixed;
  for (std::size_t s0 = 0; s0 < 2 * N; s0 += N) {
    auto conv = oracle::causal_conv(oracle::cols({proj.begin() + s0, proj.begin() + s0 + N}, 0, 8),
                                    oracle::to_mat(p.filter));
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<double> row(8);
      for (std::size_t c = 0; c < 8; ++c) row[c] = (gate[s0 + i][c] + p.b1[c]) * oracle::silu(conv[i][c] + p.b2[c]);
      mixed.push_back(row);
    }
  }
  auto want = oracle::matmul(mixed, oracle::to_mat(p.w3));
  for (auto& r : want)
    for (std::size_t c = 0; c < 4; ++c) r[c] += p.b3[c];
  EXPECT_LT(oracle::max_abs_diff(want, forward_gated(p, u, N)), 1e-12);
}

TEST(BaseConv, DecoderMatchesForwardAndHoldsTail) {
  Rng rng(4);
  auto p = init_baseconv<double>(4, 2, 3, rng, 0.5);
  auto u = rng.normal_tensor({6, 4}, 1.0);
  auto ref = forward_gated(p, u);
  BaseConvDecoder<double> dec(p);
  for (std::size_t i = 0; i < 6; ++i) {
    auto y = dec.step(u.data().subspan(i * 4, 4));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y[c], ref.at(i, c), 1e-13);
    EXPECT_EQ(dec.scalar_count(), std::min<std::size_t>(i + 1, 2) * 8);
  }
}

TEST(BaseConv, ParameterErrors) {
  Rng rng(5);
  EXPECT_THROW(init_baseconv<double>(4, 0, 3, rng), ParameterError);
  EXPECT_THROW(init_baseconv<double>(4, 1, 0, rng), ParameterError);
  auto p = init_baseconv<double>(4, 1, 2, rng);
  EXPECT_THROW(forward_gated(p, Tensor<double>({3, 5}, 1.0)), DimensionError);
  p.w3 = Tensor<double>({3, 4});
  EXPECT_THROW(validate(p), DimensionError);
}

TEST(BaseConv, Gradients) {
  Rng rng(6);
  auto p = init_baseconv<double>(3, 2, 2, rng, 0.5);
  auto u = rng.normal_tensor({2 * 4, 3}, 1.0), w = rng.normal_tensor({8, 3}, 1.0);
  EXPECT_LT(grad_check([&] { return sum(mul(forward_gated(p, u, 4), w)); },
                       {u, p.w1, p.w2, p.w3, p.b1, p.b2, p.b3, p.filter}),
            1e-6);
}
