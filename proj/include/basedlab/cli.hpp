// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver. Each subcommand writes its artifacts into one --out
// directory (resolved-config.json plus subcommand outputs) and refuses to
// replace existing files unless --force is given.
//
// Exit codes: 0 success, 1 failed check or runtime error, 2 config/usage error.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "basedlab/analysis.hpp"
#include "basedlab/checkpoint.hpp"
#include "basedlab/config.hpp"
#include "basedlab/errors.hpp"
#include "basedlab/model.hpp"
#include "basedlab/mqar.hpp"
#include "basedlab/theory.hpp"

namespace basedlab::cli {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("BASEDLAB_LOG");
  if (!v || !*v) return LogLevel::Info;
  const std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  throw ConfigError("expected one of error, info, debug; got '" + s + "'", "BASEDLAB_LOG");
}

class Logger {
 public:
  Logger(std::ostream& os, LogLevel level) : os_(os), level_(level) {}
  void info(const std::string& m) const { emit(LogLevel::Info, "info", m); }
  void debug(const std::string& m) const { emit(LogLevel::Debug, "debug", m); }
  bool debug_enabled() const { return level_ >= LogLevel::Debug; }

 private:
  void emit(LogLevel l, const char* tag, const std::string& m) const {
    if (level_ >= l) os_ << "[" << tag << "] " << m << '\n';
  }
  std::ostream& os_;
  LogLevel level_;
};

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool force = false;
};

// Output directory with overwrite protection.
class OutDir {
 public:
  OutDir(std::filesystem::path dir, bool force) : dir_(std::move(dir)), force_(force) {}

  bool enabled() const { return !dir_.empty(); }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  // Checks every name first so a refused run writes nothing.
  void claim(const std::vector<std::string>& names) const {
    if (!enabled()) return;
    if (std::filesystem::exists(dir_) && !std::filesystem::is_directory(dir_)) {
      throw ConfigError("'" + dir_.string() + "' exists and is not a directory", "--out");
    }
    if (!force_) {
      for (const auto& n : names) {
        if (std::filesystem::exists(path(n))) {
          throw ConfigError("refusing to overwrite '" + path(n).string() + "' (pass --force)", "--out");
        }
      }
    }
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& content) const {
    std::ofstream os(path(name), std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot open '" + path(name).string() + "' for writing");
    os << content;
    if (!os) throw InputError("write failed for '" + path(name).string() + "'");
  }

 private:
  std::filesystem::path dir_;
  bool force_;
};

inline constexpr const char* kResolvedConfig = "resolved-config.json";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kDataset = "dataset.txt";

inline RunConfig load_run_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : parse_config(f.config);
  if (!f.out.empty()) c.io.out = f.out;
  if (f.seed) {
    c.model.seed = *f.seed;
    c.task.seed = *f.seed;
  }
  return c;
}

inline OutDir out_dir(const RunConfig& c, const CommonFlags& f, bool required) {
  if (required && c.io.out.empty()) throw ConfigError("an output directory is required", "io.out");
  return OutDir(c.io.out, f.force);
}

inline Json eval_json(const EvalReport& r) {
  Json buckets = Json::array();
  for (const auto& b : r.by_gap) {
    buckets.push_back(
        {{"lo", b.lo}, {"hi", b.hi}, {"correct", b.correct}, {"total", b.total}, {"accuracy", b.accuracy()}});
  }
  return Json{{"accuracy", r.accuracy()}, {"correct", r.correct}, {"total", r.total}, {"by_gap", buckets}};
}

inline std::string gap_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "gap_lo,gap_hi,correct,total,accuracy\n";
  for (const auto& b : r.by_gap) {
    os << b.lo << ',' << b.hi << ',' << b.correct << ',' << b.total << ',' << format_double(b.accuracy()) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_mqar_gen(const CommonFlags& f, std::ostream& out, const Logger& log) {
  const RunConfig c = load_run_config(f);
  validate(c.task);
  const OutDir dir = out_dir(c, f, true);
  dir.claim({kResolvedConfig, kDataset, kReport});
  const MqarBatch b = generate(c.task, c.io.dataset_batch, 0);
  std::ostringstream ds;
  write_dataset(ds, b);
  dir.write(kResolvedConfig, dump_canonical(to_json(c)));
  dir.write(kDataset, ds.str());
  dir.write(kReport, dump_canonical(Json{{"sequences", b.batch},
                                         {"seq_len", b.seq_len},
                                         {"queries", b.masked_count()},
                                         {"vocab", c.task.vocab()}}));
  log.info("wrote " + std::to_string(b.batch) + " sequences to " + dir.path(kDataset).string());
  out << b.batch << " sequences, " << b.masked_count() << " queries\n";
  return 0;
}

inline int cmd_train(const CommonFlags& f, std::ostream& out, const Logger& log) {
  RunConfig c = load_run_config(f);
  validate(c.model);
  validate(c.train);
  validate(c.task);
  const OutDir dir = out_dir(c, f, true);
  dir.claim({kResolvedConfig, kMetrics, kReport, kCheckpoint});
  dir.write(kResolvedConfig, dump_canonical(to_json(c)));
  return with_scalar(c.model.scalar, [&]<typename T>() {
    auto m = build<T>(c.model);
    log.info("training " + c.model.layer_pattern + " (" + std::to_string(m.parameter_count()) + " parameters, " +
             std::to_string(c.train.steps) + " steps)");
    const std::size_t every = std::max<std::size_t>(1, c.train.steps / 10);
    const auto res = train_mqar(m, c.task, c.train, [&](const StepRecord& r) {
      if (log.debug_enabled() || (r.step + 1) % every == 0) {
        log.info("step " + std::to_string(r.step + 1) + " loss " + format_double(r.loss));
      }
    });
    std::ostringstream csv;
    csv << "step,loss,lr,grad_norm\n";
    for (const auto& s : res.steps) {
      csv << s.step << ',' << format_double(s.loss) << ',' << format_double(s.lr) << ',' << format_double(s.grad_norm)
          << '\n';
    }
    Json evals = Json::array();
    for (const auto& e : res.evals) evals.push_back({{"step", e.step}, {"accuracy", e.accuracy}, {"loss", e.loss}});
    const auto st = model_state_size(c.model, c.task.seq_len, c.analysis.bytes_per_element);
    Json report{{"steps", res.steps.size()},
                {"parameters", m.parameter_count()},
                {"state_elems", st.elements},
                {"state_bytes", st.bytes},
                {"evals", evals},
                {"final_eval", eval_json(res.final_eval)}};
    dir.write(kMetrics, csv.str());
    dir.write(kReport, dump_canonical(report));
    save_checkpoint(dir.path(kCheckpoint).string(), m);
    out << "accuracy " << format_double(res.final_eval.accuracy()) << '\n';
    return 0;
  });
}

inline int cmd_eval(const CommonFlags& f, const std::string& checkpoint, std::ostream& out, const Logger& log) {
  RunConfig c = load_run_config(f);
  const std::string ck = checkpoint.empty() ? c.io.checkpoint : checkpoint;
  if (ck.empty()) throw ConfigError("a checkpoint path is required", "io.checkpoint");
  if (!checkpoint.empty()) c.io.checkpoint = checkpoint;
  const OutDir dir = out_dir(c, f, false);
  dir.claim({kResolvedConfig, kMetrics, kReport});
  MqarBatch data;
  if (!c.io.dataset.empty()) {
    std::ifstream is(c.io.dataset);
    if (!is) throw InputError("cannot open dataset '" + c.io.dataset + "'");
    data = read_dataset(is);
  } else {
    validate(c.task);
    MqarConfig ev = c.task;
    ev.seed = eval_seed(c.task.seed);
    data = generate(ev, c.train.eval_batch, 0);
  }
  const ModelConfig mc = read_checkpoint_config(ck);
  const EvalReport rep = with_scalar(mc.scalar, [&]<typename T>() {
    const auto m = load_checkpoint<T>(ck);
    if (data.num_keys + data.num_values + 1 > m.config.vocab) {
      throw InputError("dataset vocabulary exceeds the model vocabulary");
    }
    return evaluate(m, data);
  });
  log.info("evaluated " + std::to_string(rep.total) + " queries");
  if (dir.enabled()) {
    c.model = mc;
    dir.write(kResolvedConfig, dump_canonical(to_json(c)));
    dir.write(kMetrics, gap_csv(rep));
    dir.write(kReport, dump_canonical(eval_json(rep)));
  }
  out << "accuracy " << format_double(rep.accuracy()) << " (" << rep.correct << "/" << rep.total << ")\n";
  return 0;
}

inline int cmd_tradeoff(const CommonFlags& f, std::ostream& out, const Logger& log) {
  const RunConfig c = load_run_config(f);
  validate(c.model);
  validate(c.train);
  validate(c.task);
  const OutDir dir = out_dir(c, f, true);
  dir.claim({kResolvedConfig, kMetrics, kReport});
  const auto grid = c.sweep.points.empty() ? default_sweep_grid(c.model.d_model) : c.sweep.points;
  log.info("sweeping " + std::to_string(grid.size()) + " points on " + std::to_string(f.jobs) + " worker(s)");
  const auto res = tradeoff_sweep(grid, c.model, c.task, c.train, f.jobs, c.analysis.bytes_per_element);
  std::ostringstream csv;
  write_sweep_csv(csv, res.rows);
  dir.write(kResolvedConfig, dump_canonical(to_json(c)));
  dir.write(kMetrics, csv.str());
  dir.write(kReport, dump_canonical(sweep_json(res)));
  out << csv.str();
  out << "state_monotone " << (res.state_monotone ? "true" : "false") << "\naccuracy_monotone "
      << (res.accuracy_monotone ? "true" : "false") << '\n';
  return res.state_monotone ? 0 : 1;
}

inline ArchSpec arch_spec(const StateSizeQuery& q) {
  ArchSpec s;
  s.kind = arch_kind_from_string(q.kind);
  s.d = q.d;
  s.n = q.n;
  s.d_prime = q.d_prime;
  s.window = q.window;
  s.d_state = q.d_state;
  return s;
}

inline int cmd_statesize(const CommonFlags& f, std::ostream& out, const Logger&) {
  const RunConfig c = load_run_config(f);
  const auto rep = state_size(arch_spec(c.analysis.state_size), c.analysis.bytes_per_element);
  const OutDir dir = out_dir(c, f, false);
  dir.claim({kResolvedConfig, kReport});
  if (dir.enabled()) {
    dir.write(kResolvedConfig, dump_canonical(to_json(c)));
    dir.write(kReport, dump_canonical(to_json(rep)));
  }
  out << rep.elements << " elements (" << rep.bytes << " bytes): " << rep.formula << '\n';
  return 0;
}

inline int cmd_iocost(const CommonFlags& f, std::ostream& out, const Logger&) {
  const RunConfig c = load_run_config(f);
  const auto& q = c.analysis.io;
  IoParams p{q.batch, q.heads, q.seq_len, q.head_dim, q.d_prime, c.analysis.bytes_per_element, q.pad_tile};
  const auto pre = io_cost_prefill(IoMode::Ours, p);
  const auto dec =
      io_cost_decode(q.batch, q.heads, q.head_dim, q.d_prime, c.analysis.bytes_per_element, q.pad_tile, q.state_resident);
  const OutDir dir = out_dir(c, f, false);
  dir.claim({kResolvedConfig, kReport});
  if (dir.enabled()) {
    dir.write(kResolvedConfig, dump_canonical(to_json(c)));
    dir.write(kReport, dump_canonical(Json{{"prefill", to_json(pre)}, {"decode", to_json(dec)}}));
  }
  out << "D " << pre.D << "\nprefill baseline hbm " << pre.baseline.hbm_sram() << "\nprefill ours hbm "
      << pre.ours.hbm_sram() << "\nfeaturize savings " << pre.savings << " elements (" << pre.bytes(pre.savings)
      << " bytes)\ndecode per-token " << dec.total() << " elements, state " << dec.state_elements << " elements\n";
  return 0;
}

inline int cmd_verify(const CommonFlags& f, std::ostream& out, const Logger&) {
  const RunConfig c = load_run_config(f);
  const OutDir dir = out_dir(c, f, false);
  dir.claim({kResolvedConfig, kReport});
  const auto checks = theory::verify();
  bool ok = true;
  Json rows = Json::array();
  for (const auto& r : checks) {
    ok = ok && r.passed();
    out << (r.passed() ? "PASS " : "FAIL ") << r.name << " (" << r.instances << " instances, " << r.mismatches
        << " mismatches)\n";
    rows.push_back({{"name", r.name}, {"instances", r.instances}, {"mismatches", r.mismatches}, {"passed", r.passed()}});
  }
  if (dir.enabled()) {
    dir.write(kResolvedConfig, dump_canonical(to_json(c)));
    dir.write(kReport, dump_canonical(Json{{"checks", rows}, {"passed", ok}}));
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"basedlab: linear attention, recall and state-size laboratory", "basedlab"};
  app.require_subcommand(1);
  CommonFlags f;
  std::uint64_t seed = 0;
  std::string checkpoint;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
    s->add_option("--out", f.out, "output directory (overrides io.out)");
    s->add_option("--seed", seed, "seed for the model and task (overrides both)");
    s->add_option("--jobs", f.jobs, "concurrent workers")->check(CLI::PositiveNumber);
    s->add_flag("--force", f.force, "overwrite existing artifacts");
  };
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {{"mqar-gen", "export an MQAR dataset"},
                      {"train", "train a model on MQAR and write a checkpoint"},
                      {"eval", "evaluate a checkpoint on MQAR"},
                      {"tradeoff", "state size vs. recall sweep"},
                      {"statesize", "closed-form recurrent state size"},
                      {"iocost", "prefill and decode traffic model"},
                      {"verify", "exhaustive theory checks"}};
  std::vector<CLI::App*> cmds;
  for (const auto& s : subs) {
    auto* c = app.add_subcommand(s.name, s.help);
    add_common(c);
    cmds.push_back(c);
  }
  cmds[2]->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (overrides io.checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }
  for (auto* c : cmds) {
    if (c->count("--seed")) f.seed = seed;
  }

  try {
    const Logger log(err, log_level_from_env());
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "mqar-gen") return cmd_mqar_gen(f, out, log);
    if (name == "train") return cmd_train(f, out, log);
    if (name == "eval") return cmd_eval(f, checkpoint, out, log);
    if (name == "tradeoff") return cmd_tradeoff(f, out, log);
    if (name == "statesize") return cmd_statesize(f, out, log);
    if (name == "iocost") return cmd_iocost(f, out, log);
    return cmd_verify(f, out, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const SpecError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace basedlab::cli
