// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Closed-form recurrent state sizes, a prefill/decode IO traffic model for
// Taylor linear attention, and the state-size vs. recall sweep driver.

#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "basedlab/config.hpp"
#include "basedlab/errors.hpp"
#include "basedlab/feature_maps.hpp"
#include "basedlab/linear_attention.hpp"
#include "basedlab/model.hpp"
#include "basedlab/mqar.hpp"

namespace basedlab {

enum class ArchKind { Based, Attention, SlidingWindow, Mamba, H3, Hyena };

inline std::string to_string(ArchKind k) {
  switch (k) {
    case ArchKind::Based: return "based";
    case ArchKind::Attention: return "attention";
    case ArchKind::SlidingWindow: return "sliding_window";
    case ArchKind::Mamba: return "mamba";
    case ArchKind::H3: return "h3";
    case ArchKind::Hyena: return "hyena";
  }
  return "unknown";
}

inline ArchKind arch_kind_from_string(const std::string& s) {
  for (auto k : {ArchKind::Based, ArchKind::Attention, ArchKind::SlidingWindow, ArchKind::Mamba, ArchKind::H3,
                 ArchKind::Hyena}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown architecture '" + s + "'", "arch");
}

struct ArchSpec {
  ArchKind kind = ArchKind::Based;
  std::optional<std::size_t> d, n, d_prime, window, d_state;
};

struct StateSizeReport {
  std::size_t elements = 0;
  std::size_t bytes = 0;
  std::string formula;
};

namespace detail {

inline std::size_t need(const std::optional<std::size_t>& v, const char* field, ArchKind k) {
  if (!v || *v == 0) {
    throw SpecError(to_string(k) + " state size needs a positive '" + field + "'");
  }
  return *v;
}

inline std::string num(std::size_t v) { return std::to_string(v); }

}  // namespace detail

inline StateSizeReport state_size(const ArchSpec& s, std::size_t bytes_per_element = 2) {
  StateSizeReport r;
  std::size_t e = 0;
  switch (s.kind) {
    case ArchKind::Based: {
      const auto d = detail::need(s.d, "d", s.kind), dp = detail::need(s.d_prime, "d_prime", s.kind);
      const auto f = taylor_unique(dp);
      e = (d + 1) * f;
      r.formula = "(d + 1) x (1 + 3d'/2 + d'^2/2) = " + detail::num(d + 1) + " x " + detail::num(f);
      break;
    }
    case ArchKind::Attention: {
      const auto d = detail::need(s.d, "d", s.kind), n = detail::need(s.n, "n", s.kind);
      e = 2 * d * n;
      r.formula = "2 x d x N = 2 x " + detail::num(d) + " x " + detail::num(n);
      break;
    }
    case ArchKind::SlidingWindow: {
      const auto d = detail::need(s.d, "d", s.kind), n = detail::need(s.n, "n", s.kind),
                 w = detail::need(s.window, "window", s.kind);
      e = 2 * d * std::min(n, w);
      r.formula = "2 x d x min(N, w) = 2 x " + detail::num(d) + " x " + detail::num(std::min(n, w));
      break;
    }
    case ArchKind::Mamba: {
      const auto d = detail::need(s.d, "d", s.kind), ds = detail::need(s.d_state, "d_state", s.kind);
      e = 2 * d * ds;
      r.formula = "2 x d x d_state = 2 x " + detail::num(d) + " x " + detail::num(ds);
      break;
    }
    case ArchKind::H3: {
      const auto d = detail::need(s.d, "d", s.kind), ds = detail::need(s.d_state, "d_state", s.kind);
      e = d * ds;
      r.formula = "d x d_state = " + detail::num(d) + " x " + detail::num(ds);
      break;
    }
    case ArchKind::Hyena: {
      const auto d = detail::need(s.d, "d", s.kind), n = detail::need(s.n, "n", s.kind);
      e = d * n;
      r.formula = "d x N = " + detail::num(d) + " x " + detail::num(n);
      break;
    }
  }
  r.elements = e;
  r.bytes = e * bytes_per_element;
  return r;
}

// Decode-time state of a hybrid model after n tokens, summed over layers:
//   L: heads x (head_dim + 1) x D_unique   (KV-state plus K-state per head)
//   S: 2 x heads x head_dim x min(n, w)
//   C: min(n, F - 1) x c x d_model         (projected tail rows)
// With one head and head_dim = d_model the L term is the Based formula.
inline StateSizeReport model_state_size(const ModelConfig& c, std::size_t n, std::size_t bytes_per_element = 2) {
  validate(c);
  const std::size_t hd = c.resolved_head_dim();
  const FeatureMap fm{feature_map_kind_from_string(c.feature_map), c.d_prime};
  const std::size_t D = feature_dim(fm, FeatureLayout::Packed);
  StateSizeReport r;
  std::size_t e = 0;
  for (char k : c.layer_pattern) {
    if (k == 'L') e += c.heads * (hd + 1) * D;
    if (k == 'S') e += 2 * c.heads * hd * std::min(n, c.window);
    if (k == 'C') e += std::min(n, c.conv_taps - 1) * c.conv_expansion * c.d_model;
  }
  r.elements = e;
  r.bytes = e * bytes_per_element;
  r.formula = "sum over layers of L: H(d+1)D, S: 2Hd min(N, w), C: min(N, F-1) c d";
  return r;
}

// ---------------------------------------------------------------------------
// IO model

enum class IoMode { Baseline, Ours };

struct IoParams {
  std::size_t batch = 1, heads = 1, seq_len = 1, head_dim = 1, d_prime = 16;
  std::size_t bytes_per_element = 2;
  std::size_t pad_tile = 0;  // 0: D unpadded
};

// D = 1 + d' + d'^2, rounded up to a multiple of pad_tile when pad_tile > 0.
inline std::size_t io_feature_dim(std::size_t d_prime, std::size_t pad_tile) {
  const std::size_t D = taylor_materialized(d_prime);
  return pad_tile ? (D + pad_tile - 1) / pad_tile * pad_tile : D;
}

struct IoPhase {
  std::size_t hbm_sram = 0;       // elements moved between HBM and SRAM
  std::size_t sram_register = 0;  // elements moved between SRAM and registers
};

struct IoSide {
  IoPhase featurize, read, write;
  std::size_t hbm_sram() const { return featurize.hbm_sram + read.hbm_sram + write.hbm_sram; }
  std::size_t sram_register() const {
    return featurize.sram_register + read.sram_register + write.sram_register;
  }
};

struct IoCostReport {
  IoMode mode = IoMode::Ours;
  IoParams params;
  std::size_t D = 0;
  IoSide baseline, ours;
  // HBM traffic avoided by never writing featurized Q, K: 2BHND.
  std::size_t savings = 0;
  // Full HBM difference baseline - ours = 4BHND - 2BHNd'.
  std::size_t total_savings = 0;

  const IoSide& selected() const { return mode == IoMode::Baseline ? baseline : ours; }
  std::size_t bytes(std::size_t elements) const { return elements * params.bytes_per_element; }
};

// Baseline: featurize Q, K in HBM (write 2BHND), read them back with V
// (2BHND + BHNd), write y (BHNd); register traffic BHNDd (constant 1).
// Ours: read q, k, v (2BHNd' + BHNd), featurize on chip, write y (BHNd).
inline IoCostReport io_cost_prefill(IoMode mode, const IoParams& p) {
  if (p.batch == 0 || p.heads == 0 || p.seq_len == 0 || p.head_dim == 0 || p.d_prime == 0) {
    throw ParameterError("io_cost_prefill: all dimensions must be positive");
  }
  IoCostReport r;
  r.mode = mode;
  r.params = p;
  r.D = io_feature_dim(p.d_prime, p.pad_tile);
  const std::size_t BHN = p.batch * p.heads * p.seq_len;
  r.baseline.featurize.hbm_sram = 2 * BHN * r.D;
  r.baseline.read.hbm_sram = 2 * BHN * r.D + BHN * p.head_dim;
  r.baseline.read.sram_register = BHN * r.D * p.head_dim;
  r.baseline.write.hbm_sram = BHN * p.head_dim;
  r.ours.read.hbm_sram = 2 * BHN * p.d_prime + BHN * p.head_dim;
  r.ours.write.hbm_sram = BHN * p.head_dim;
  r.savings = r.baseline.featurize.hbm_sram - r.ours.featurize.hbm_sram;
  r.total_savings = r.baseline.hbm_sram() - r.ours.hbm_sram();
  return r;
}

struct DecodeIoReport {
  std::size_t D = 0;
  std::size_t token_traffic = 0;   // BH(2D + 2d): featurized q, k, plus v in and y out
  std::size_t state_traffic = 0;   // 2BHDd when the state is not resident on chip
  std::size_t state_elements = 0;  // BHDd
  std::size_t bytes_per_element = 2;
  std::size_t total() const { return token_traffic + state_traffic; }
  std::size_t total_bytes() const { return total() * bytes_per_element; }
};

inline DecodeIoReport io_cost_decode(std::size_t batch, std::size_t heads, std::size_t head_dim, std::size_t d_prime,
                                     std::size_t bytes_per_element = 2, std::size_t pad_tile = 0,
                                     bool state_resident = true) {
  DecodeIoReport r;
  r.D = io_feature_dim(d_prime, pad_tile);
  const std::size_t BH = batch * heads;
  r.token_traffic = BH * (2 * r.D + 2 * head_dim);
  r.state_elements = BH * r.D * head_dim;
  r.state_traffic = state_resident ? 0 : 2 * r.state_elements;
  r.bytes_per_element = bytes_per_element;
  return r;
}

template <typename T = double>
struct TiledRun {
  Tensor<T> output;
  TransferCounters counters;
};

// Tiled schedule with modeled transfer counting at tile boundaries.
template <typename T>
TiledRun<T> tiled_reference_run(const LinAttnParams<T>& p, const Tensor<T>& u, std::size_t chunk = 16,
                                std::size_t seq_len = 0) {
  TiledRun<T> r;
  r.output = chunked_forward(p, u, chunk, seq_len, &r.counters);
  return r;
}

// ---------------------------------------------------------------------------
// Tradeoff sweep

struct SweepRow {
  std::string arch;
  std::size_t d_model = 0, d_prime = 0, window = 0, heads = 0;
  std::size_t state_elems = 0, state_bytes = 0;
  std::optional<double> mqar_acc;
  std::uint64_t seed = 0;
  std::string status;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  bool state_monotone = true;     // Based rows: state strictly increasing in d'
  bool accuracy_monotone = true;  // Based rows: accuracy non-decreasing in d'
};

// The 6-point desk grid: Based d' in {4, 8, 16}, sliding window w in {8, 32},
// and full attention.
inline std::vector<SweepPoint> default_sweep_grid(std::size_t d_model = 64) {
  std::vector<SweepPoint> g;
  for (std::size_t dp : {4, 8, 16}) g.push_back({"based", d_model, dp, 0, 1, 0, true});
  for (std::size_t w : {8, 32}) g.push_back({"sliding_window", d_model, 0, w, 1, 0, true});
  g.push_back({"attention", d_model, 0, 0, 1, 0, true});
  return g;
}

// Model for a trainable grid point: "C L" for Based, "C S" for windowed and
// full attention (window = N).
inline ModelConfig sweep_model_config(const SweepPoint& pt, const ModelConfig& base, const MqarConfig& task) {
  ModelConfig c = base;
  c.vocab = task.vocab();
  c.d_model = pt.d_model;
  c.heads = pt.heads;
  c.head_dim = 0;
  if (pt.arch == "based") {
    c.layer_pattern = "CL";
    c.d_prime = pt.d_prime;
  } else if (pt.arch == "sliding_window") {
    c.layer_pattern = "CS";
    c.window = pt.window;
  } else if (pt.arch == "attention") {
    c.layer_pattern = "CS";
    c.window = task.seq_len;
  } else {
    throw ConfigError("architecture '" + pt.arch + "' is not trainable", "sweep.points");
  }
  return c;
}

inline bool trainable_arch(const std::string& a) {
  return a == "based" || a == "sliding_window" || a == "attention";
}

// Calls f.template operator()<T>() with T chosen by the scalar name.
template <typename F>
decltype(auto) with_scalar(const std::string& scalar, F&& f) {
  if (scalar == "f32") return f.template operator()<float>();
  return f.template operator()<double>();
}

inline SweepRow run_sweep_point(const SweepPoint& pt, const ModelConfig& base, const MqarConfig& task,
                                const TrainConfig& tc, std::size_t bytes_per_element) {
  SweepRow row;
  row.arch = pt.arch;
  row.d_model = pt.d_model;
  row.heads = pt.heads;
  row.seed = base.seed;
  if (!trainable_arch(pt.arch)) {
    ArchSpec s;
    s.kind = arch_kind_from_string(pt.arch);
    s.d = pt.d_model;
    s.n = task.seq_len;
    s.d_state = pt.d_state;
    s.window = pt.window;
    s.d_prime = pt.d_prime;
    const auto rep = state_size(s, bytes_per_element);
    row.d_prime = pt.d_prime;
    row.window = pt.window;
    row.state_elems = rep.elements;
    row.state_bytes = rep.bytes;
    row.status = "formula";
    return row;
  }
  const ModelConfig mc = sweep_model_config(pt, base, task);
  row.d_prime = pt.arch == "based" ? mc.d_prime : 0;
  row.window = pt.arch == "based" ? 0 : mc.window;
  const auto st = model_state_size(mc, task.seq_len, bytes_per_element);
  row.state_elems = st.elements;
  row.state_bytes = st.bytes;
  if (!pt.train) {
    row.status = "skipped";
    return row;
  }
  try {
    row.mqar_acc = with_scalar(mc.scalar, [&]<typename T>() {
      auto m = build<T>(mc);
      return train_mqar(m, task, tc).final_eval.accuracy();
    });
    row.status = "ok";
  } catch (const TrainingError& e) {
    row.status = "diverged@" + std::to_string(e.step());
  }
  return row;
}

inline void summarize(SweepResult& r) {
  std::vector<const SweepRow*> based;
  for (const auto& row : r.rows)
    if (row.arch == "based") based.push_back(&row);
  std::stable_sort(based.begin(), based.end(),
                   [](const SweepRow* a, const SweepRow* b) { return a->d_prime < b->d_prime; });
  r.state_monotone = r.accuracy_monotone = true;
  for (std::size_t i = 1; i < based.size(); ++i) {
    if (based[i]->d_prime == based[i - 1]->d_prime) continue;
    if (!(based[i]->state_elems > based[i - 1]->state_elems)) r.state_monotone = false;
    if (based[i]->mqar_acc && based[i - 1]->mqar_acc && *based[i]->mqar_acc < *based[i - 1]->mqar_acc) {
      r.accuracy_monotone = false;
    }
  }
}

// Grid points run on up to `jobs` threads; rows keep grid order.
inline SweepResult tradeoff_sweep(const std::vector<SweepPoint>& grid, const ModelConfig& base,
                                  const MqarConfig& task, const TrainConfig& tc, std::size_t jobs = 1,
                                  std::size_t bytes_per_element = 2) {
  SweepResult res;
  res.rows.resize(grid.size());
  jobs = std::max<std::size_t>(1, std::min(jobs, grid.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < grid.size();) {
      try {
        res.rows[i] = run_sweep_point(grid[i], base, task, tc, bytes_per_element);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  summarize(res);
  return res;
}

// ---------------------------------------------------------------------------
// Output

// Shortest round-trip decimal form; identical across runs and platforms.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline constexpr const char* kSweepCsvHeader = "arch,d_model,d_prime,window,heads,state_elems,state_bytes,mqar_acc,seed,status";

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.arch << ',' << r.d_model << ',' << r.d_prime << ',' << r.window << ',' << r.heads << ','
       << r.state_elems << ',' << r.state_bytes << ',' << (r.mqar_acc ? format_double(*r.mqar_acc) : "") << ','
       << r.seed << ',' << r.status << '\n';
  }
}

inline Json sweep_json(const SweepResult& res) {
  Json rows = Json::array();
  for (const auto& r : res.rows) {
    rows.push_back({{"arch", r.arch},
                    {"d_model", r.d_model},
                    {"d_prime", r.d_prime},
                    {"window", r.window},
                    {"heads", r.heads},
                    {"state_elems", r.state_elems},
                    {"state_bytes", r.state_bytes},
                    {"mqar_acc", r.mqar_acc ? Json(*r.mqar_acc) : Json(nullptr)},
                    {"seed", r.seed},
                    {"status", r.status}});
  }
  return Json{{"rows", rows}, {"state_monotone", res.state_monotone}, {"accuracy_monotone", res.accuracy_monotone}};
}

inline Json to_json(const StateSizeReport& r) {
  return Json{{"elements", r.elements}, {"bytes", r.bytes}, {"formula", r.formula}};
}

inline Json to_json(const IoCostReport& r) {
  auto side = [&](const IoSide& s) {
    return Json{{"featurize", {{"hbm_sram", s.featurize.hbm_sram}, {"sram_register", s.featurize.sram_register}}},
                {"read", {{"hbm_sram", s.read.hbm_sram}, {"sram_register", s.read.sram_register}}},
                {"write", {{"hbm_sram", s.write.hbm_sram}, {"sram_register", s.write.sram_register}}},
                {"hbm_sram_total", s.hbm_sram()},
                {"hbm_sram_bytes", r.bytes(s.hbm_sram())},
                {"sram_register_total", s.sram_register()}};
  };
  return Json{{"mode", r.mode == IoMode::Baseline ? "baseline" : "ours"},
              {"D", r.D},
              {"baseline", side(r.baseline)},
              {"ours", side(r.ours)},
              {"savings", r.savings},
              {"savings_bytes", r.bytes(r.savings)},
              {"total_savings", r.total_savings},
              {"bytes_per_element", r.params.bytes_per_element}};
}

inline Json to_json(const DecodeIoReport& r) {
  return Json{{"D", r.D},
              {"token_traffic", r.token_traffic},
              {"state_traffic", r.state_traffic},
              {"state_elements", r.state_elements},
              {"total", r.total()},
              {"total_bytes", r.total_bytes()}};
}

}  // namespace basedlab
