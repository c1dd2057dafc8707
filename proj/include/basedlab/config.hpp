// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a JSON document with sections model, train, task, sweep,
// analysis and io. Parsing is strict (unknown keys and type mismatches raise
// ConfigError naming the key path); omitted keys take defaults; to_json emits
// the fully resolved document with sorted keys.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "basedlab/errors.hpp"
#include "basedlab/model.hpp"
#include "basedlab/mqar.hpp"

namespace basedlab {

using Json = nlohmann::json;

// Grid point for the tradeoff sweep. Trainable archs: based, sliding_window,
// attention. Formula-only: mamba, h3, hyena.
struct SweepPoint {
  std::string arch = "based";
  std::size_t d_model = 64;
  std::size_t d_prime = 16;
  std::size_t window = 0;
  std::size_t heads = 1;
  std::size_t d_state = 0;
  bool train = true;
  bool operator==(const SweepPoint&) const = default;
};

struct SweepConfig {
  std::vector<SweepPoint> points;  // empty: built-in desk grid
  bool operator==(const SweepConfig&) const = default;
};

struct StateSizeQuery {
  std::string kind = "based";
  std::size_t d = 64;
  std::size_t n = 1024;
  std::size_t d_prime = 16;
  std::size_t window = 64;
  std::size_t d_state = 16;
  bool operator==(const StateSizeQuery&) const = default;
};

struct IoQuery {
  std::size_t batch = 1;
  std::size_t heads = 16;
  std::size_t seq_len = 1024;
  std::size_t head_dim = 64;
  std::size_t d_prime = 16;
  std::size_t pad_tile = 0;  // 0: no padding
  bool state_resident = true;
  bool operator==(const IoQuery&) const = default;
};

struct AnalysisConfig {
  StateSizeQuery state_size;
  IoQuery io;
  std::size_t bytes_per_element = 2;
  std::size_t chunk = 16;
  bool operator==(const AnalysisConfig&) const = default;
};

struct IoConfig {
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::size_t dataset_batch = 64;
  bool operator==(const IoConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  MqarConfig task;
  SweepConfig sweep;
  AnalysisConfig analysis;
  IoConfig io;
  bool operator==(const RunConfig&) const = default;
};

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_);
  }

  template <typename F>
  void field(const std::string& key, F&& read) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, path_ + "." + key);
  }

  void get(const std::string& key, std::size_t& out) {
    field(key, [&](const Json& v, const std::string& p) {
      if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer", p);
      out = v.get<std::size_t>();
    });
  }
  void get(const std::string& key, std::uint64_t& out, int) {
    field(key, [&](const Json& v, const std::string& p) {
      if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer", p);
      out = v.get<std::uint64_t>();
    });
  }
  void get(const std::string& key, int& out) {
    field(key, [&](const Json& v, const std::string& p) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer", p);
      out = v.get<int>();
    });
  }
  void get(const std::string& key, double& out) {
    field(key, [&](const Json& v, const std::string& p) {
      if (!v.is_number()) throw ConfigError("expected a number", p);
      out = v.get<double>();
    });
  }
  void get(const std::string& key, bool& out) {
    field(key, [&](const Json& v, const std::string& p) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean", p);
      out = v.get<bool>();
    });
  }
  void get(const std::string& key, std::string& out) {
    field(key, [&](const Json& v, const std::string& p) {
      if (!v.is_string()) throw ConfigError("expected a string", p);
      out = v.get<std::string>();
    });
  }

  // Call after every field: rejects keys that were never declared.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError("unknown key", path_ + "." + it.key());
      }
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Section readers / writers

inline ModelConfig model_config_from_json(const Json& j, const std::string& path = "model") {
  ModelConfig c;
  detail::ObjectReader r(j, path);
  r.get("vocab", c.vocab);
  r.get("d_model", c.d_model);
  r.get("heads", c.heads);
  r.get("d_prime", c.d_prime);
  r.get("head_dim", c.head_dim);
  r.get("window", c.window);
  r.get("layer_pattern", c.layer_pattern);
  r.get("feature_map", c.feature_map);
  r.get("decay", c.decay);
  r.get("rotary", c.rotary);
  r.get("conv_taps", c.conv_taps);
  r.get("conv_expansion", c.conv_expansion);
  r.get("tie_embeddings", c.tie_embeddings);
  r.get("mlp", c.mlp);
  r.get("mlp_expansion", c.mlp_expansion);
  r.get("norm", c.norm);
  r.get("scalar", c.scalar);
  r.get("init_std", c.init_std);
  r.get("seed", c.seed, 0);
  r.finish();
  return c;
}

inline Json to_json(const ModelConfig& c) {
  return Json{{"vocab", c.vocab},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"d_prime", c.d_prime},
              {"head_dim", c.head_dim},
              {"window", c.window},
              {"layer_pattern", c.layer_pattern},
              {"feature_map", c.feature_map},
              {"decay", c.decay},
              {"rotary", c.rotary},
              {"conv_taps", c.conv_taps},
              {"conv_expansion", c.conv_expansion},
              {"tie_embeddings", c.tie_embeddings},
              {"mlp", c.mlp},
              {"mlp_expansion", c.mlp_expansion},
              {"norm", c.norm},
              {"scalar", c.scalar},
              {"init_std", c.init_std},
              {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const Json& j, const std::string& path = "train") {
  TrainConfig t;
  detail::ObjectReader r(j, path);
  r.get("lr", t.lr);
  r.get("min_lr", t.min_lr);
  r.get("warmup_frac", t.warmup_frac);
  std::string sched = to_string(t.schedule);
  r.get("schedule", sched);
  t.schedule = schedule_from_string(sched);
  r.get("batch", t.batch);
  r.get("steps", t.steps);
  r.get("grad_clip", t.grad_clip);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_eps", t.adam_eps);
  r.get("weight_decay", t.weight_decay);
  r.get("eval_every", t.eval_every);
  r.get("eval_batch", t.eval_batch);
  r.finish();
  return t;
}

inline Json to_json(const TrainConfig& t) {
  return Json{{"lr", t.lr},
              {"min_lr", t.min_lr},
              {"warmup_frac", t.warmup_frac},
              {"schedule", to_string(t.schedule)},
              {"batch", t.batch},
              {"steps", t.steps},
              {"grad_clip", t.grad_clip},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"weight_decay", t.weight_decay},
              {"eval_every", t.eval_every},
              {"eval_batch", t.eval_batch}};
}

inline MqarConfig task_config_from_json(const Json& j, const std::string& path = "task") {
  MqarConfig c;
  detail::ObjectReader r(j, path);
  r.get("num_keys", c.num_keys);
  r.get("num_values", c.num_values);
  r.get("seq_len", c.seq_len);
  r.field("kv_pairs", [&](const Json& v, const std::string& p) {
    if (v.is_number_unsigned()) {
      c.kv_min = c.kv_max = v.get<std::size_t>();
    } else if (v.is_array() && v.size() == 2 && v[0].is_number_unsigned() && v[1].is_number_unsigned()) {
      c.kv_min = v[0].get<std::size_t>();
      c.kv_max = v[1].get<std::size_t>();
    } else {
      throw ConfigError("expected a count or a [min, max] pair", p);
    }
  });
  r.get("seed", c.seed, 0);
  r.finish();
  return c;
}

inline Json to_json(const MqarConfig& c) {
  Json kv = c.kv_min == c.kv_max ? Json(c.kv_min) : Json::array({c.kv_min, c.kv_max});
  return Json{{"num_keys", c.num_keys},
              {"num_values", c.num_values},
              {"seq_len", c.seq_len},
              {"kv_pairs", kv},
              {"seed", c.seed}};
}

inline SweepPoint sweep_point_from_json(const Json& j, const std::string& path) {
  SweepPoint p;
  detail::ObjectReader r(j, path);
  r.get("arch", p.arch);
  r.get("d_model", p.d_model);
  r.get("d_prime", p.d_prime);
  r.get("window", p.window);
  r.get("heads", p.heads);
  r.get("d_state", p.d_state);
  r.get("train", p.train);
  r.finish();
  return p;
}

inline Json to_json(const SweepPoint& p) {
  return Json{{"arch", p.arch},       {"d_model", p.d_model}, {"d_prime", p.d_prime}, {"window", p.window},
              {"heads", p.heads},     {"d_state", p.d_state}, {"train", p.train}};
}

inline SweepConfig sweep_config_from_json(const Json& j, const std::string& path = "sweep") {
  SweepConfig s;
  detail::ObjectReader r(j, path);
  r.field("points", [&](const Json& v, const std::string& p) {
    if (!v.is_array()) throw ConfigError("expected an array", p);
    for (std::size_t i = 0; i < v.size(); ++i) {
      s.points.push_back(sweep_point_from_json(v[i], p + "[" + std::to_string(i) + "]"));
    }
  });
  r.finish();
  return s;
}

inline Json to_json(const SweepConfig& s) {
  Json pts = Json::array();
  for (const auto& p : s.points) pts.push_back(to_json(p));
  return Json{{"points", pts}};
}

inline AnalysisConfig analysis_config_from_json(const Json& j, const std::string& path = "analysis") {
  AnalysisConfig a;
  detail::ObjectReader r(j, path);
  r.field("state_size", [&](const Json& v, const std::string& p) {
    detail::ObjectReader s(v, p);
    s.get("kind", a.state_size.kind);
    s.get("d", a.state_size.d);
    s.get("n", a.state_size.n);
    s.get("d_prime", a.state_size.d_prime);
    s.get("window", a.state_size.window);
    s.get("d_state", a.state_size.d_state);
    s.finish();
  });
  r.field("io", [&](const Json& v, const std::string& p) {
    detail::ObjectReader s(v, p);
    s.get("batch", a.io.batch);
    s.get("heads", a.io.heads);
    s.get("seq_len", a.io.seq_len);
    s.get("head_dim", a.io.head_dim);
    s.get("d_prime", a.io.d_prime);
    s.get("pad_tile", a.io.pad_tile);
    s.get("state_resident", a.io.state_resident);
    s.finish();
  });
  r.get("bytes_per_element", a.bytes_per_element);
  r.get("chunk", a.chunk);
  r.finish();
  return a;
}

inline Json to_json(const AnalysisConfig& a) {
  return Json{{"state_size",
               {{"kind", a.state_size.kind},
                {"d", a.state_size.d},
                {"n", a.state_size.n},
                {"d_prime", a.state_size.d_prime},
                {"window", a.state_size.window},
                {"d_state", a.state_size.d_state}}},
              {"io",
               {{"batch", a.io.batch},
                {"heads", a.io.heads},
                {"seq_len", a.io.seq_len},
                {"head_dim", a.io.head_dim},
                {"d_prime", a.io.d_prime},
                {"pad_tile", a.io.pad_tile},
                {"state_resident", a.io.state_resident}}},
              {"bytes_per_element", a.bytes_per_element},
              {"chunk", a.chunk}};
}

inline IoConfig io_config_from_json(const Json& j, const std::string& path = "io") {
  IoConfig c;
  detail::ObjectReader r(j, path);
  r.get("out", c.out);
  r.get("checkpoint", c.checkpoint);
  r.get("dataset", c.dataset);
  r.get("dataset_batch", c.dataset_batch);
  r.finish();
  return c;
}

inline Json to_json(const IoConfig& c) {
  return Json{{"out", c.out}, {"checkpoint", c.checkpoint}, {"dataset", c.dataset}, {"dataset_batch", c.dataset_batch}};
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "$");
  r.field("model", [&](const Json& v, const std::string&) { c.model = model_config_from_json(v); });
  r.field("train", [&](const Json& v, const std::string&) { c.train = train_config_from_json(v); });
  r.field("task", [&](const Json& v, const std::string&) { c.task = task_config_from_json(v); });
  r.field("sweep", [&](const Json& v, const std::string&) { c.sweep = sweep_config_from_json(v); });
  r.field("analysis", [&](const Json& v, const std::string&) { c.analysis = analysis_config_from_json(v); });
  r.field("io", [&](const Json& v, const std::string&) { c.io = io_config_from_json(v); });
  try {
    r.finish();
  } catch (const ConfigError& e) {
    // Top-level keys are reported without the "$." prefix.
    throw ConfigError("unknown section", e.path().substr(2));
  }
  return c;
}

inline Json to_json(const RunConfig& c) {
  return Json{{"model", to_json(c.model)},       {"train", to_json(c.train)}, {"task", to_json(c.task)},
              {"sweep", to_json(c.sweep)},       {"analysis", to_json(c.analysis)},
              {"io", to_json(c.io)}};
}

// 1-based line and column of a byte offset in text.
inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline Json parse_json_text(const std::string& text, const std::string& source = "config") {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t off = e.byte > 0 ? e.byte - 1 : 0;
    auto [line, col] = line_column(text, off);
    throw ConfigError("malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(col),
                      source);
  }
}

inline RunConfig parse_config_text(const std::string& text) { return run_config_from_json(parse_json_text(text)); }

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", "--config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string dump_canonical(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace basedlab
