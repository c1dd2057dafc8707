// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "basedlab/analysis.hpp"
#include "basedlab/checkpoint.hpp"
#include "basedlab/model.hpp"
#include "oracles.hpp"

using namespace basedlab;

namespace {

ModelConfig small(const std::string& pattern) {
  ModelConfig c;
  c.vocab = 17;
  c.d_model = 8;
  c.heads = 2;
  c.d_prime = 3;
  c.window = 3;
  c.layer_pattern = pattern;
  c.init_std = 0.3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Model, PatternInterleaving) {
  EXPECT_EQ(interleave_pattern(1, 1, 2), "CLCS");
  EXPECT_EQ(interleave_pattern(2, 0, 1), "CLL");
  auto n = layer_counts("CLCSL");
  EXPECT_EQ(n.linear, 2u);
  EXPECT_EQ(n.window, 1u);
  EXPECT_EQ(n.conv, 2u);
}

TEST(Model, ValidationNamesTheKey) {
  auto c = small("CLX");
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "model.layer_pattern");
  }
  c = small("S");
  c.head_dim = 3;
  EXPECT_THROW(validate(c), ConfigError);
  c = small("L");
  c.scalar = "f16";
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Model, ParametersAreOrderedAndCounted) {
  auto m = build<double>(small("CLS"));
  auto ps = m.parameters();
  EXPECT_EQ(ps.front().first, "embed");
  EXPECT_EQ(ps[1].first, "layers.0.norm");
  EXPECT_EQ(ps[2].first, "layers.0.conv.w1");
  EXPECT_EQ(ps.back().first, "head");
  std::size_t n = 0;
  for (const auto& p : ps) n += p.second.size();
  EXPECT_EQ(m.parameter_count(), n);
  auto tied = small("L");
  tied.tie_embeddings = true;
  EXPECT_EQ(build<double>(tied).parameters().back().first, "final_norm");
}

TEST(Model, SeedsDetermineWeights) {
  auto a = build<double>(small("CL")), b = build<double>(small("CL"));
  auto c2 = small("CL");
  c2.seed = 6;
  auto c = build<double>(c2);
  EXPECT_EQ(oracle::max_abs_diff(a.embed, b.embed), 0.0);
  EXPECT_GT(oracle::max_abs_diff(a.embed, c.embed), 0.0);
}

TEST(Model, DecoderMatchesPrefillAndStateFormula) {
  for (const std::string pattern : {"CLCS", "L", "S", "C"}) {
    for (bool decay : {false, true}) {
      auto cfg = small(pattern);
      cfg.decay = decay;
      cfg.mlp = pattern == "CLCS";
      auto m = build<double>(cfg);
      std::vector<int> toks{1, 4, 2, 9, 16, 0, 3};
      auto logits = m.forward(toks);
      HybridDecoder<double> dec(m);
      for (std::size_t i = 0; i < toks.size(); ++i) {
        auto row = dec.step(toks[i]);
        for (std::size_t c = 0; c < 17; ++c) ASSERT_NEAR(row[c], logits.at(i, c), 1e-10) << pattern << " i=" << i;
        EXPECT_EQ(dec.state_scalar_count(), model_state_size(cfg, i + 1).elements) << pattern << " i=" << i;
      }
    }
  }
}

TEST(Model, BatchedForwardMatchesPerSequence) {
  auto m = build<double>(small("CLCS"));
  std::vector<int> a{1, 2, 3, 4, 5}, b{6, 7, 8, 9, 10}, ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  auto y = m.forward(ab, 5), yb = m.forward(b);
  for (std::size_t i = 0; i < yb.size(); ++i) EXPECT_NEAR(y[5 * 17 + i], yb[i], 1e-13);
}

TEST(Model, GreedyDecode) {
  auto m = build<double>(small("CL"));
  std::vector<int> prefix{3, 1};
  auto r = decode(m, prefix, 4);
  ASSERT_EQ(r.tokens.size(), 6u);
  ASSERT_EQ(r.logits.size(), 6u);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(r.tokens[i], static_cast<int>(argmax_row<double>(r.logits[i - 1])));
  EXPECT_THROW(decode(m, std::span<const int>{}, 1), InputError);
}

TEST(Model, ForwardGradients) {
  auto cfg = small("CLS");
  cfg.mlp = true;
  cfg.decay = true;
  auto m = build<double>(cfg);
  std::vector<int> toks{1, 2, 3, 4, 5, 6};
  std::vector<int> tg{2, 3, 4, 5, 6, 7};
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  std::vector<Tensor<double>> ps;
  for (auto& p : m.parameters()) ps.push_back(p.second);
  EXPECT_LT(grad_check([&] { return masked_cross_entropy(m.forward(toks, 3), tg, mask); }, ps), 1e-4);
}

TEST(Model, CheckpointRoundTrip) {
  auto cfg = small("CLCS");
  cfg.decay = true;
  auto m = build<double>(cfg);
  std::stringstream ss;
  save_checkpoint(ss, m);
  const std::string bytes = ss.str();
  auto r = load_checkpoint<double>(ss);
  EXPECT_EQ(to_json(r.config), to_json(m.config));
  auto ma = m.parameters(), ra = r.parameters();
  ASSERT_EQ(ma.size(), ra.size());
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_EQ(oracle::max_abs_diff(ma[i].second, ra[i].second), 0.0);
  std::stringstream again;
  save_checkpoint(again, r);
  EXPECT_EQ(again.str(), bytes);
  std::stringstream bad(bytes.substr(0, bytes.size() / 2));
  EXPECT_ANY_THROW(load_checkpoint<double>(bad));
  std::stringstream junk("not a checkpoint at all");
  EXPECT_ANY_THROW(load_checkpoint<double>(junk));
}

TEST(Model, LearningRateSchedule) {
  TrainConfig t;
  t.steps = 100;
  t.warmup_frac = 0.1;
  t.lr = 1.0;
  t.min_lr = 0.0;
  EXPECT_DOUBLE_EQ(learning_rate(t, 0), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate(t, 9), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(t, 10), 1.0);
  EXPECT_NEAR(learning_rate(t, 55), 0.5, 1e-12);
  t.schedule = Schedule::Constant;
  EXPECT_DOUBLE_EQ(learning_rate(t, 99), 1.0);
  EXPECT_THROW(schedule_from_string("linear"), ConfigError);
  t.batch = 0;
  EXPECT_THROW(validate(t), ConfigError);
}

TEST(Model, TrainingLowersLossOnTinyTask) {
  MqarConfig task;
  task.num_keys = 4;
  task.num_values = 4;
  task.seq_len = 12;
  task.kv_min = task.kv_max = 2;
  task.seed = 1;
  auto cfg = small("CL");
  cfg.vocab = task.vocab();
  cfg.d_model = 16;
  cfg.init_std = 0.1;
  auto m = build<double>(cfg);
  TrainConfig t;
  t.steps = 60;
  t.batch = 16;
  t.lr = 1e-2;
  t.eval_batch = 32;
  std::size_t seen = 0;
  auto res = train_mqar(m, task, t, [&](const StepRecord& r) { EXPECT_EQ(r.step, seen++); });
  ASSERT_EQ(res.steps.size(), 60u);
  EXPECT_EQ(seen, 60u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += res.steps[i].loss;
    last += res.steps[50 + i].loss;
  }
  EXPECT_LT(last, first);
  EXPECT_EQ(res.final_eval.total, 64u);
}

TEST(Model, ZeroStepsStillEvaluates) {
  MqarConfig task;
  task.num_keys = task.num_values = 4;
  task.seq_len = 12;
  task.kv_min = task.kv_max = 2;
  auto cfg = small("L");
  cfg.vocab = task.vocab();
  auto m = build<double>(cfg);
  TrainConfig t;
  t.steps = 0;
  t.eval_batch = 8;
  auto res = train_mqar(m, task, t);
  EXPECT_TRUE(res.steps.empty());
  EXPECT_EQ(res.final_eval.total, 16u);
  cfg.vocab = 5;
  auto tiny = build<double>(cfg);
  EXPECT_THROW(train_mqar(tiny, task, t), ConfigError);
}

TEST(Model, SinglePrecisionAgreesWithDouble) {
  auto cfg = small("CLCS");
  auto md = build<double>(cfg);
  auto mf = build<float>(cfg);
  std::vector<int> toks{1, 4, 2, 9, 16};
  auto yd = md.forward(toks);
  auto yf = mf.forward(toks);
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yd[i], static_cast<double>(yf[i]), 1e-4);
}
