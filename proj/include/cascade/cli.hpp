// Copyright 2026 The Cascade Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cascade/checkpoint.hpp"
#include "cascade/config.hpp"
#include "cascade/data.hpp"
#include "cascade/error.hpp"
#include "cascade/evaluate.hpp"
#include "cascade/io.hpp"
#include "cascade/oracle.hpp"
#include "cascade/reinforce.hpp"

namespace cascade::cli {

enum ExitCode : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;  // report: run directory to read
  std::optional<double> alpha;
  std::optional<double> budget;
  std::string mode;
  std::string cost_convention;
  std::string reward_loss;
  std::string checkpoint;
  std::vector<std::string> overrides;
};

// Flags are applied after --set overrides, so they win.
inline RunConfig resolve_config(const Options& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config_path.empty()) {
    std::string text;
    try {
      text = read_text_file(o.config_path);
    } catch (const FormatError&) {
      throw ConfigError("cannot read config '" + o.config_path + "'");
    }
    doc = parse_config_text(text, o.config_path);
  }
  for (const auto& s : o.overrides) apply_override(doc, s);
  if (o.seed) doc["seed"] = *o.seed;
  auto section = [&](const char* name) -> nlohmann::json& {
    auto& s = doc[name];
    if (s.is_null()) s = nlohmann::json::object();
    if (!s.is_object()) throw ConfigError(std::string(name) + ": expected an object");
    return s;
  };
  if (o.alpha) section("train")["alpha"] = *o.alpha;
  if (!o.mode.empty()) section("train")["mode"] = o.mode;
  if (!o.cost_convention.empty()) section("train")["cost_convention"] = o.cost_convention;
  if (!o.reward_loss.empty()) section("train")["reward_loss"] = o.reward_loss;
  if (!o.checkpoint.empty()) section("train")["init_checkpoint"] = o.checkpoint;
  if (o.budget) section("calibrate")["budget"] = *o.budget;
  return parse_config(doc);
}

// Collects the files a command writes so the manifest can list them.
class RunWriter {
 public:
  RunWriter(std::string command, const RunConfig& cfg, std::filesystem::path out)
      : command_(std::move(command)), out_(std::move(out)) {
    if (out_.empty()) throw ConfigError("--out is required");
    digest_ = config_digest(cfg);
    seed_ = cfg.seed;
    mode_ = std::string(to_string(cfg.train.mode));
    std::filesystem::create_directories(out_);
  }

  const std::string& digest() const { return digest_; }
  const std::filesystem::path& dir() const { return out_; }

  void csv(const std::string& rel, const std::string& content) {
    std::string schema, version;
    const auto nl = content.find('\n');
    const std::string first = content.substr(0, nl);
    if (first.rfind("# schema: ", 0) == 0) {
      const auto v = first.rfind(" v");
      schema = first.substr(10, v - 10);
      version = first.substr(v + 2);
    }
    put(rel, content, schema, version);
  }

  void json(const std::string& rel, const nlohmann::json& doc) {
    json(rel, doc, doc.value("format", ""), doc.contains("version") ? doc["version"].dump() : "");
  }

  void json(const std::string& rel, const nlohmann::json& doc, const std::string& schema,
            const std::string& version) {
    put(rel, doc.dump(1) + "\n", schema, version);
  }

  void checkpoint(const std::string& rel, const CascadeModel& m) {
    json(rel, to_json(m, digest_));
  }

  void finish() {
    nlohmann::json arts = nlohmann::json::array();
    std::sort(artifacts_.begin(), artifacts_.end(),
              [](const auto& a, const auto& b) { return a["path"] < b["path"]; });
    for (const auto& a : artifacts_) arts.push_back(a);
    nlohmann::json man = {{"format", "cascade-run-manifest"},
                          {"version", 1},
                          {"command", command_},
                          {"config_digest", digest_},
                          {"seed", seed_},
                          {"mode", mode_},
                          {"output_directory", out_.generic_string()},
                          {"artifacts", arts}};
    write_text_file(out_ / "manifest.json", man.dump(1) + "\n");
  }

 private:
  void put(const std::string& rel, const std::string& content, const std::string& schema,
           const std::string& version) {
    write_text_file(out_ / rel, content);
    artifacts_.push_back({{"path", rel},
                          {"schema", schema},
                          {"schema_version", version},
                          {"fnv1a64", hex64(fnv1a64(content))}});
  }

  std::string command_;
  std::filesystem::path out_;
  std::string digest_;
  std::uint64_t seed_ = 0;
  std::string mode_;
  std::vector<nlohmann::json> artifacts_;
};

// Each classifier on its own: test accuracy and its FLOPs next to the
// largest classifier's.
inline std::string static_baselines_csv(const CascadeModel& m, const Dataset& test) {
  CsvWriter w("cascade-static-baselines", 1, {"k", "accuracy", "flops", "cost_fraction"});
  const double top = static_cast<double>(flops_of(m.classifiers.back()));
  for (std::size_t k = 0; k < m.stages(); ++k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      hits += argmax(observe(m, k, test.x(i))) == test.labels[i];
    }
    const double flops = static_cast<double>(flops_of(m.classifiers[k]));
    w.row({std::to_string(k + 1), format_double(static_cast<double>(hits) / test.size()),
           format_double(flops), format_double(flops / top)});
  }
  return w.str();
}

inline void write_eval(RunWriter& w, const EvalReport& rep, const std::string& prefix = "") {
  w.json(prefix + "eval_report.json", to_json(rep));
  w.csv(prefix + "eval_metrics.csv", eval_metrics_csv(rep));
  w.csv(prefix + "accuracy_matrix.csv", accuracy_matrix_csv(rep));
  w.csv(prefix + "assignment_histogram.csv", assignment_histogram_csv(rep));
}

namespace detail {

inline void write_config(RunWriter& w, const RunConfig& cfg) {
  w.json("config.json", to_json(cfg), "cascade-config", "1");
}

// Starting cascade for train/sweep/calibrate: a checkpoint if one is
// named, otherwise a fresh build pretrained in place.
inline CascadeModel initial_model(const RunConfig& cfg, const Split& split, RunWriter& w,
                                  std::ostream& log) {
  if (!cfg.init_checkpoint.empty()) {
    auto m = load_cascade(cfg.init_checkpoint);
    if (m.input_dim() != split.train.dim()) {
      throw DimensionError("checkpoint input dim " + std::to_string(m.input_dim()) +
                           " != data dim " + std::to_string(split.train.dim()));
    }
    if (m.num_classes != split.train.num_classes) {
      throw DimensionError("checkpoint class count does not match the data");
    }
    if (cfg.train.mode == TrainMode::Simplified && !m.classifiers_pretrained) {
      throw ConfigError("simplified mode needs a checkpoint with pretrained classifiers");
    }
    return m;
  }
  auto m = build_model(cfg, split.train);
  log << "pretraining " << m.stages() << " classifiers\n";
  const auto plog = pretrain_classifiers(m, split.train, effective_pretrain(cfg));
  w.csv("pretrain_metrics.csv", pretrain_csv(plog));
  return m;
}

inline void require_training(const RunConfig& cfg, bool need_alpha) {
  std::vector<std::string> errors;
  if (need_alpha && !cfg.alpha_set) errors.push_back("train.alpha: required (--alpha)");
  if (cfg.train.mode == TrainMode::Simplified && cfg.init_checkpoint.empty() &&
      cfg.pretrain.epochs == 0) {
    errors.push_back("train.mode: simplified mode needs a pretrain checkpoint or pretrain.epochs > 0");
  }
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " configuration error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

inline std::vector<std::string> frontier_columns(std::size_t K) {
  std::vector<std::string> cols{"alpha", "status", "accuracy", "amortized_flops", "amortized_cost"};
  for (std::size_t k = 0; k < K; ++k) cols.push_back("stop_fraction_" + std::to_string(k + 1));
  return cols;
}

}  // namespace detail

inline int cmd_pretrain(const RunConfig& cfg, const Options& o, std::ostream& log) {
  RunWriter w("pretrain", cfg, o.out);
  const auto split = load_data(cfg);
  auto m = build_model(cfg, split.train);
  const auto plog = pretrain_classifiers(m, split.train, effective_pretrain(cfg));
  detail::write_config(w, cfg);
  w.csv("pretrain_metrics.csv", pretrain_csv(plog));
  w.csv("static_baselines.csv", static_baselines_csv(m, split.test));
  w.checkpoint("checkpoint.json", m);
  w.finish();
  log << "pretrained " << m.stages() << " classifiers -> " << o.out << "\n";
  return kOk;
}

inline int cmd_train(const RunConfig& cfg, const Options& o, std::ostream& log) {
  detail::require_training(cfg, true);
  RunWriter w("train", cfg, o.out);
  const auto split = load_data(cfg);
  auto m = detail::initial_model(cfg, split, w, log);
  detail::write_config(w, cfg);
  w.csv("static_baselines.csv", static_baselines_csv(m, split.test));
  const auto tlog = train(m, split.train, effective_train(cfg));
  w.csv("train_metrics.csv", metrics_csv(tlog, m.stages()));
  const auto rep = evaluate(m, split.test, effective_eval(cfg));
  write_eval(w, rep);
  w.checkpoint("checkpoint.json", m);
  w.finish();
  log << "alpha " << format_double(cfg.train.alpha) << ": accuracy " << format_double(rep.accuracy)
      << ", amortized cost " << format_double(rep.amortized_cost) << "\n";
  return kOk;
}

inline int cmd_evaluate(const RunConfig& cfg, const Options& o, std::ostream& log) {
  if (cfg.init_checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
  RunWriter w("evaluate", cfg, o.out);
  const auto split = load_data(cfg);
  const auto m = load_cascade(cfg.init_checkpoint);
  detail::write_config(w, cfg);
  const auto rep = evaluate(m, split.test, effective_eval(cfg));
  write_eval(w, rep);
  w.finish();
  log << "accuracy " << format_double(rep.accuracy) << ", amortized cost "
      << format_double(rep.amortized_cost) << "\n";
  return kOk;
}

// One train + evaluate per alpha, each from the same starting cascade.
// A failed point is recorded and the sweep moves on.
inline int cmd_sweep(const RunConfig& cfg, const Options& o, std::ostream& log) {
  if (cfg.sweep_alphas.size() < 2) throw ConfigError("sweep.alphas: need at least 2 values");
  detail::require_training(cfg, false);
  auto alphas = cfg.sweep_alphas;
  std::sort(alphas.begin(), alphas.end());
  RunWriter w("sweep", cfg, o.out);
  const auto split = load_data(cfg);
  const auto init = detail::initial_model(cfg, split, w, log);
  detail::write_config(w, cfg);
  w.checkpoint("checkpoint.json", init);
  w.csv("static_baselines.csv", static_baselines_csv(init, split.test));
  const auto cols = detail::frontier_columns(init.stages());
  CsvWriter frontier("cascade-frontier", 1, cols);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const std::string sub = "alpha_" + std::to_string(i + 1) + "/";
    std::vector<std::string> row{format_double(alphas[i])};
    try {
      auto m = init;
      const auto tlog = train(m, split.train, effective_train(cfg, alphas[i]));
      const auto rep = evaluate(m, split.test, effective_eval(cfg));
      w.csv(sub + "train_metrics.csv", metrics_csv(tlog, m.stages()));
      write_eval(w, rep, sub);
      w.checkpoint(sub + "checkpoint.json", m);
      row.insert(row.end(), {"ok", format_double(rep.accuracy), format_double(rep.amortized_flops),
                             format_double(rep.amortized_cost)});
      for (double h : rep.assignment_histogram) row.push_back(format_double(h));
      log << "alpha " << row[0] << ": accuracy " << row[2] << ", amortized cost " << row[4] << "\n";
    } catch (const Error& e) {
      row.resize(1);
      row.push_back("failed");
      while (row.size() < cols.size()) row.push_back("NA");
      log << "alpha " << row[0] << ": failed: " << e.what() << "\n";
    }
    frontier.row(row);
  }
  w.csv("frontier.csv", frontier.str());
  w.finish();
  return kOk;
}

// Figure-ready tables from a finished run directory. Pure: reads `input`,
// writes only under `out`.
inline int cmd_report(const RunConfig& cfg, const Options& o, std::ostream& log) {
  if (o.input.empty()) throw ConfigError("report needs --in <run directory>");
  const std::filesystem::path in(o.input);
  const bool has_frontier = std::filesystem::exists(in / "frontier.csv");
  const bool has_eval = std::filesystem::exists(in / "eval_report.json");
  if (!has_frontier && !has_eval) {
    throw FormatError(o.input + ": no frontier.csv or eval_report.json to report on");
  }
  RunWriter w("report", cfg, o.out);
  if (has_frontier) {
    const auto t = parse_csv_text(read_text_file(in / "frontier.csv"));
    if (t.schema != "cascade-frontier v1") throw FormatError("frontier.csv: unexpected schema '" + t.schema + "'");
    CsvWriter curve("cascade-frontier-curve", 1, {"kind", "label", "alpha", "accuracy", "amortized_cost"});
    const auto a = t.column("alpha"), s = t.column("status"), acc = t.column("accuracy"),
               cost = t.column("amortized_cost");
    for (const auto& r : t.rows) {
      if (r[s] != "ok") continue;
      curve.row({"cascade", "alpha=" + r[a], r[a], r[acc], r[cost]});
    }
    if (std::filesystem::exists(in / "static_baselines.csv")) {
      const auto sb = parse_csv_text(read_text_file(in / "static_baselines.csv"));
      if (sb.schema != "cascade-static-baselines v1") {
        throw FormatError("static_baselines.csv: unexpected schema '" + sb.schema + "'");
      }
      const auto k = sb.column("k"), sacc = sb.column("accuracy"), frac = sb.column("cost_fraction");
      for (const auto& r : sb.rows) curve.row({"static", "C" + r[k], "NA", r[sacc], r[frac]});
    }
    w.csv("frontier_curve.csv", curve.str());
  }
  if (has_eval) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_text_file(in / "eval_report.json"));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("eval_report.json: ") + e.what());
    }
    const auto rep = eval_report_from_json(doc);
    w.csv("assignment_histogram.csv", assignment_histogram_csv(rep));
    w.csv("accuracy_matrix.csv", accuracy_matrix_csv(rep));
  }
  w.finish();
  log << "report written to " << o.out << "\n";
  return kOk;
}

// Analytic gradient against finite differences, then the REINFORCE
// estimator's mean against the same oracle with b = 0 and with the
// minibatch baseline.
inline int cmd_gradcheck(const RunConfig& cfg, const Options& o, std::ostream& log) {
  const auto& g = cfg.gradcheck;
  CascadeModel m;
  Dataset ds;
  if (g.instance == "canonical") {
    auto inst = canonical_tiny_instance(g.instance_seed);
    m = std::move(inst.model);
    ds = std::move(inst.data);
  } else {
    const auto split = load_data(cfg);
    ds = split.train;
    m = cfg.init_checkpoint.empty() ? build_model(cfg, ds) : load_cascade(cfg.init_checkpoint);
  }
  check_enumeration_guard(m, ds);
  RunWriter w("gradcheck", cfg, o.out);
  RewardConfig reward{g.alpha, cfg.train.reward_loss, cfg.train.cost_convention};
  const auto analytic = exact_gradient(m, ds, reward).flatten();
  const auto fd = exact_gradient_fd(m, ds, reward, g.eps);
  const double rel = max_relative_error(analytic, fd);

  BiasCheckOptions bo;
  bo.rollouts = g.rollouts;
  bo.seed = cfg.derived(g.seed);
  bo.eps = g.eps;
  bo.baseline = BaselineKind::Zero;
  const auto zero = estimator_bias_check(m, ds, reward, bo);
  bo.baseline = BaselineKind::Minibatch;
  const auto mini = estimator_bias_check(m, ds, reward, bo);

  struct Check {
    std::string name;
    double value;
    double threshold;
  };
  const std::vector<Check> checks{{"analytic_vs_fd_max_rel_error", rel, g.tolerance},
                                  {"bias_max_abs_z_zero_baseline", zero.max_abs_z, g.z_threshold},
                                  {"bias_max_abs_z_minibatch_baseline", mini.max_abs_z, g.z_threshold}};
  CsvWriter out("cascade-gradcheck", 1, {"check", "value", "threshold", "pass"});
  bool all = true;
  for (const auto& c : checks) {
    const bool pass = c.value < c.threshold;
    all = all && pass;
    out.row({c.name, format_double(c.value), format_double(c.threshold), pass ? "1" : "0"});
    log << (pass ? "PASS " : "FAIL ") << c.name << " = " << format_double(c.value) << " (< "
        << format_double(c.threshold) << ")\n";
  }
  detail::write_config(w, cfg);
  w.csv("gradcheck.csv", out.str());
  w.finish();
  return all ? kOk : kNumeric;
}

// Bisection over alpha for a normalized amortized-cost budget; every
// probe trains from the same starting cascade.
inline int cmd_calibrate(const RunConfig& cfg, const Options& o, std::ostream& log) {
  if (!cfg.budget_set) throw ConfigError("calibrate.budget: required (--budget)");
  detail::require_training(cfg, false);
  RunWriter w("calibrate", cfg, o.out);
  const auto split = load_data(cfg);
  const auto init = detail::initial_model(cfg, split, w, log);
  detail::write_config(w, cfg);
  auto cost_at = [&](double alpha) {
    auto m = init;
    train(m, split.train, effective_train(cfg, alpha));
    const double c = evaluate(m, split.test, effective_eval(cfg)).amortized_cost;
    log << "alpha " << format_double(alpha) << ": amortized cost " << format_double(c) << "\n";
    return c;
  };
  const auto res = calibrate_alpha(cost_at, cfg.calibrate, init.cost_schedule().front());
  w.csv("calibration_trace.csv", calibration_csv(res));
  w.json("calibration.json", {{"format", "cascade-calibration"},
                              {"version", 1},
                              {"budget", cfg.calibrate.budget},
                              {"alpha", res.alpha},
                              {"amortized_cost", res.cost},
                              {"converged", res.converged}});
  w.finish();
  log << "alpha " << format_double(res.alpha) << " gives cost " << format_double(res.cost)
      << (res.converged ? "" : " (budget tolerance not reached)") << "\n";
  return res.converged ? kOk : kNumeric;
}

inline int dispatch(const Options& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o);
  if (o.command == "pretrain") return cmd_pretrain(cfg, o, log);
  if (o.command == "train") return cmd_train(cfg, o, log);
  if (o.command == "evaluate") return cmd_evaluate(cfg, o, log);
  if (o.command == "sweep") return cmd_sweep(cfg, o, log);
  if (o.command == "report") return cmd_report(cfg, o, log);
  if (o.command == "gradcheck") return cmd_gradcheck(cfg, o, log);
  if (o.command == "calibrate") return cmd_calibrate(cfg, o, log);
  throw ConfigError("unknown command '" + o.command + "'");
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SizeError*>(&e)) return kConfig;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const IndexError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kData;
  }
  return kNumeric;
}

// Parses argv-style arguments (without the program name) and runs one
// subcommand. Never throws; returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Cascaded classifiers with learned early exits"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"pretrain", "Pretrain every classifier with cross-entropy"},
      {"train", "Train stopping policies (and classifiers in joint mode) for one alpha"},
      {"evaluate", "Evaluate a checkpoint on the test split"},
      {"sweep", "Train and evaluate over a list of alpha values"},
      {"report", "Build figure-ready CSVs from a run directory"},
      {"gradcheck", "Check gradients and estimator bias on a tiny instance"},
      {"calibrate", "Find the alpha that meets an amortized cost budget"}};
  for (const auto& [name, help] : commands) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("--config", o.config_path, "JSON config file");
    sc->add_option("--seed", o.seed, "Top-level seed");
    sc->add_option("--out", o.out, "Output directory")->required();
    sc->add_option("--set", o.overrides, "Override a config key (dotted.key=value)");
    sc->add_option("--mode", o.mode, "joint | simplified");
    sc->add_option("--cost-convention", o.cost_convention, "inclusive | exclusive");
    sc->add_option("--reward-loss", o.reward_loss, "zero-one | log");
    sc->add_option("--alpha", o.alpha, "Cost penalty");
    sc->add_option("--budget", o.budget, "Normalized amortized cost budget");
    sc->add_option("--checkpoint", o.checkpoint, "Starting or evaluated checkpoint");
    if (name == "report") sc->add_option("--in", o.input, "Run directory to read")->required();
    sc->callback([&o, n = name] { o.command = n; });
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }
  try {
    return dispatch(o, log);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace cascade::cli
