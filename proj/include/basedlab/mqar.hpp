// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-query associative recall.
//
// Token ids: keys [0, K), values [K, K+V), padding K+V. A sequence is
//   k_0 v_0 k_1 v_1 ... k_{n-1} v_{n-1} | q_0 ... q_{n-1} | pad ...
// where the queries are a shuffled copy of the keys. The target for a query
// sits at the query position itself (the next token would be its value).

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "basedlab/errors.hpp"
#include "basedlab/rng.hpp"
#include "basedlab/tensor.hpp"

namespace basedlab {

struct MqarConfig {
  int num_keys = 32;
  int num_values = 32;
  std::size_t seq_len = 64;
  std::size_t kv_min = 8;
  std::size_t kv_max = 8;
  std::uint64_t seed = 0;

  int pad_token() const { return num_keys + num_values; }
  int vocab() const { return num_keys + num_values + 1; }
};

inline void validate(const MqarConfig& c) {
  if (c.num_keys < 1 || c.num_values < 1) throw ConfigError("num_keys and num_values must be >= 1", "task");
  if (c.kv_min < 1 || c.kv_min > c.kv_max) throw ConfigError("need 1 <= kv_min <= kv_max", "task.kv_pairs");
  if (c.kv_max > static_cast<std::size_t>(c.num_keys)) {
    throw ConfigError("kv_pairs " + std::to_string(c.kv_max) + " exceeds num_keys " + std::to_string(c.num_keys),
                      "task.kv_pairs");
  }
  if (c.kv_max > static_cast<std::size_t>(c.num_values)) {
    throw ConfigError("kv_pairs " + std::to_string(c.kv_max) + " exceeds num_values " +
                          std::to_string(c.num_values),
                      "task.kv_pairs");
  }
  if (3 * c.kv_max > c.seq_len) {
    throw ConfigError("2*kv_pairs + queries = " + std::to_string(3 * c.kv_max) + " exceeds seq_len " +
                          std::to_string(c.seq_len),
                      "task.seq_len");
  }
}

struct MqarBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  int num_keys = 0;
  int num_values = 0;
  std::vector<int> tokens;               // batch * seq_len
  std::vector<std::uint8_t> query_mask;  // 1 at answered positions
  std::vector<int> targets;              // value token where masked, -1 elsewhere
  std::vector<int> gaps;                 // query position - key position where masked, 0 elsewhere

  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::count(query_mask.begin(), query_mask.end(), std::uint8_t{1}));
  }
  bool operator==(const MqarBatch&) const = default;
};

namespace detail {

inline void append_sequence(MqarBatch& b, const std::vector<std::pair<int, int>>& pairs,
                            const std::vector<int>& query_keys, int pad) {
  const std::size_t base = b.tokens.size();
  b.tokens.resize(base + b.seq_len, pad);
  b.query_mask.resize(base + b.seq_len, 0);
  b.targets.resize(base + b.seq_len, -1);
  b.gaps.resize(base + b.seq_len, 0);
  std::size_t pos = 0;
  for (const auto& [k, v] : pairs) {
    b.tokens[base + pos++] = k;
    b.tokens[base + pos++] = v;
  }
  for (int q : query_keys) {
    std::size_t key_pos = 0;
    int value = -1;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      if (pairs[p].first == q) {
        key_pos = 2 * p;
        value = pairs[p].second;
        break;
      }
    }
    if (value < 0) throw InputError("query key " + std::to_string(q) + " has no preceding pair");
    b.tokens[base + pos] = q;
    b.query_mask[base + pos] = 1;
    b.targets[base + pos] = value;
    b.gaps[base + pos] = static_cast<int>(pos - key_pos);
    ++pos;
  }
}

}  // namespace detail

// Builds one sequence from explicit pairs (key id, value id) and query keys.
inline MqarBatch make_sequence(const MqarConfig& cfg, const std::vector<std::pair<int, int>>& pairs,
                               const std::vector<int>& query_keys) {
  if (2 * pairs.size() + query_keys.size() > cfg.seq_len) throw ConfigError("sequence does not fit seq_len", "task");
  MqarBatch b;
  b.batch = 1;
  b.seq_len = cfg.seq_len;
  b.num_keys = cfg.num_keys;
  b.num_values = cfg.num_values;
  detail::append_sequence(b, pairs, query_keys, cfg.pad_token());
  return b;
}

// Batch number `index` of the stream defined by cfg.seed.
inline MqarBatch generate(const MqarConfig& cfg, std::size_t batch, std::uint64_t index = 0) {
  validate(cfg);
  if (batch < 1) throw ConfigError("batch must be >= 1", "train.batch");
  Rng rng(mix_seed(cfg.seed, index));
  MqarBatch b;
  b.batch = batch;
  b.seq_len = cfg.seq_len;
  b.num_keys = cfg.num_keys;
  b.num_values = cfg.num_values;
  b.tokens.reserve(batch * cfg.seq_len);
  for (std::size_t s = 0; s < batch; ++s) {
    const auto n = static_cast<int>(rng.uniform_int(cfg.kv_min, cfg.kv_max));
    auto keys = rng.sample_without_replacement(cfg.num_keys, n);
    auto values = rng.sample_without_replacement(cfg.num_values, n);
    std::vector<std::pair<int, int>> pairs(n);
    for (int i = 0; i < n; ++i) pairs[i] = {keys[i], cfg.num_keys + values[i]};
    auto order = rng.sample_without_replacement(n, n);
    std::vector<int> queries(n);
    for (int i = 0; i < n; ++i) queries[i] = keys[order[i]];
    detail::append_sequence(b, pairs, queries, cfg.pad_token());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Dataset export

inline void write_dataset(std::ostream& os, const MqarBatch& b) {
  os << "#mqar " << b.num_keys << ' ' << b.num_values << ' ' << b.seq_len << '\n';
  for (std::size_t s = 0; s < b.batch; ++s) {
    const std::size_t o = s * b.seq_len;
    for (std::size_t i = 0; i < b.seq_len; ++i) os << (i ? " " : "") << b.tokens[o + i];
    os << "\n#mask";
    for (std::size_t i = 0; i < b.seq_len; ++i) os << ' ' << int(b.query_mask[o + i]);
    os << "\n#tgt";
    for (std::size_t i = 0; i < b.seq_len; ++i) os << ' ' << b.targets[o + i];
    os << '\n';
  }
}

// Inverse of write_dataset; gaps are recomputed from the token stream.
inline MqarBatch read_dataset(std::istream& is) {
  MqarBatch b;
  std::string line, tag;
  if (!std::getline(is, line)) throw InputError("dataset: empty input");
  {
    std::istringstream hs(line);
    if (!(hs >> tag >> b.num_keys >> b.num_values >> b.seq_len) || tag != "#mqar" || b.seq_len == 0) {
      throw InputError("dataset: bad header line");
    }
  }
  auto read_row = [&](const std::string& l, const char* expect, auto& out) {
    std::istringstream ls(l);
    if (expect) {
      if (!(ls >> tag) || tag != expect) throw InputError(std::string("dataset: expected ") + expect + " line");
    }
    long long x;
    std::size_t n = 0;
    while (ls >> x) {
      out.push_back(static_cast<typename std::decay_t<decltype(out)>::value_type>(x));
      ++n;
    }
    if (n != b.seq_len) throw InputError("dataset: row length " + std::to_string(n) + " != seq_len");
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    read_row(line, nullptr, b.tokens);
    if (!std::getline(is, line)) throw InputError("dataset: missing #mask line");
    read_row(line, "#mask", b.query_mask);
    if (!std::getline(is, line)) throw InputError("dataset: missing #tgt line");
    read_row(line, "#tgt", b.targets);
    ++b.batch;
  }
  b.gaps.assign(b.tokens.size(), 0);
  for (std::size_t s = 0; s < b.batch; ++s) {
    const std::size_t o = s * b.seq_len;
    for (std::size_t i = 0; i < b.seq_len; ++i) {
      if (!b.query_mask[o + i]) continue;
      for (std::size_t j = 0; j < i; ++j) {
        if (b.tokens[o + j] == b.tokens[o + i]) {
          b.gaps[o + i] = static_cast<int>(i - j);
          break;
        }
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Evaluation

struct GapBucket {
  int lo = 0;  // inclusive
  int hi = 0;  // exclusive
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct QueryRecord {
  int gap = 0;
  bool correct = false;
};

struct EvalReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<GapBucket> by_gap;  // [2^k, 2^(k+1))
  std::vector<QueryRecord> queries;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }

  // {correct, total} over queries whose gap satisfies pred.
  template <typename Pred>
  std::pair<std::size_t, std::size_t> count_where(Pred pred) const {
    std::size_t c = 0, t = 0;
    for (const auto& q : queries) {
      if (!pred(q.gap)) continue;
      ++t;
      c += q.correct ? 1 : 0;
    }
    return {c, t};
  }
  template <typename Pred>
  double accuracy_where(Pred pred) const {
    auto [c, t] = count_where(pred);
    return t ? static_cast<double>(c) / static_cast<double>(t) : 0.0;
  }
};

// Lowest index wins ties.
template <typename T>
std::size_t argmax_row(std::span<const T> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

template <typename T>
EvalReport evaluate_logits(const MqarBatch& b, const Tensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(0) != b.tokens.size()) {
    throw DimensionError("evaluate: logits " + shape_str(logits.shape()) + " do not cover the batch");
  }
  const std::size_t c = logits.dim(1);
  EvalReport rep;
  for (std::size_t r = 0; r < b.tokens.size(); ++r) {
    if (!b.query_mask[r]) continue;
    const std::size_t pred = argmax_row<T>(logits.data().subspan(r * c, c));
    const bool ok = static_cast<int>(pred) == b.targets[r];
    rep.total++;
    rep.correct += ok ? 1 : 0;
    rep.queries.push_back({b.gaps[r], ok});
    const int g = std::max(b.gaps[r], 1);
    int k = 0;
    while ((2 << k) <= g) ++k;
    if (rep.by_gap.size() <= static_cast<std::size_t>(k)) {
      const std::size_t old = rep.by_gap.size();
      rep.by_gap.resize(k + 1);
      for (std::size_t i = old; i < rep.by_gap.size(); ++i) {
        rep.by_gap[i].lo = 1 << i;
        rep.by_gap[i].hi = 2 << i;
      }
    }
    rep.by_gap[k].total++;
    rep.by_gap[k].correct += ok ? 1 : 0;
  }
  return rep;
}

// Model: anything with forward(std::span<const int> tokens, std::size_t seq_len) -> Tensor.
template <typename Model>
EvalReport evaluate(const Model& model, const MqarBatch& b) {
  NoGradGuard guard;
  return evaluate_logits(b, model.forward(std::span<const int>(b.tokens), b.seq_len));
}

}  // namespace basedlab
