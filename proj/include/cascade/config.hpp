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

#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cascade/data.hpp"
#include "cascade/error.hpp"
#include "cascade/evaluate.hpp"
#include "cascade/io.hpp"
#include "cascade/model.hpp"
#include "cascade/reinforce.hpp"

namespace cascade {

// Run configuration. Every section seed is an offset added to the
// top-level `seed`, so one --seed flag shifts every random stream.
struct DataConfig {
  std::string source = "tiered";  // tiered | csv | idx
  TierSpec tiered{8, 4, {8.0, 3.0, 2.0}, {0.0, 0.0, 0.0}, {1, 4, 16}, {9000, 700, 300}, 7};
  std::string csv_path;
  CsvSchema csv;
  std::string idx_images;
  std::string idx_labels;
  std::size_t idx_num_classes = 0;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

struct ModelConfig {
  std::vector<std::vector<std::size_t>> classifier_hidden{{16}, {94}, {66, 66}};
  std::size_t policy_hidden = 64;
  std::string cost_source = "measured";  // measured | preset | list
  std::string cost_preset;
  std::vector<double> raw_costs;
  std::uint64_t seed = 0;
};

struct EvalSection {
  std::uint64_t seed = 0;
  StopMode stop_mode = StopMode::Sample;
};

struct GradcheckConfig {
  std::string instance = "canonical";  // canonical | config
  std::uint64_t instance_seed = 11;
  double alpha = 0.05;
  double eps = 1e-6;
  double tolerance = 1e-5;
  std::size_t rollouts = 200'000;
  double z_threshold = 4.0;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  TrainConfig train;
  bool alpha_set = false;
  std::string init_checkpoint;  // train/sweep start from this instead of pretraining
  EvalSection eval;
  std::vector<double> sweep_alphas{1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  CalibrationConfig calibrate;
  bool budget_set = false;
  GradcheckConfig gradcheck;

  std::uint64_t derived(std::uint64_t offset) const { return seed + offset; }
};

namespace detail {

// Walks one JSON object, collecting every problem instead of stopping at
// the first one. Keys never read are reported as unknown.
class Section {
 public:
  Section(const nlohmann::json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (obj_ && !obj_->is_object()) {
      fail("", "expected an object");
      obj_ = nullptr;
    }
  }

  ~Section() {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!seen_.count(k)) fail(k, "unknown key");
    }
  }

  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }

  const nlohmann::json* raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &obj_->at(key);
  }

  Section sub(const std::string& key) { return Section(raw(key), join(key), errors_); }

  void real(const std::string& key, double& out) {
    if (auto* v = raw(key)) {
      if (v->is_number()) out = v->get<double>();
      else fail(key, "expected a number");
    }
  }

  void count(const std::string& key, std::size_t& out) {
    if (auto* v = raw(key)) {
      if (v->is_number_unsigned()) out = v->get<std::size_t>();
      else fail(key, "expected a non-negative integer");
    }
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (auto* v = raw(key)) {
      if (v->is_number_unsigned()) out = v->get<std::uint64_t>();
      else fail(key, "expected a non-negative integer");
    }
  }

  void text(const std::string& key, std::string& out) {
    if (auto* v = raw(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else fail(key, "expected a string");
    }
  }

  void reals(const std::string& key, std::vector<double>& out) {
    if (auto* v = raw(key)) {
      if (!v->is_array()) return fail(key, "expected an array of numbers");
      std::vector<double> r;
      for (const auto& e : *v) {
        if (!e.is_number()) return fail(key, "expected an array of numbers");
        r.push_back(e.get<double>());
      }
      out = std::move(r);
    }
  }

  void counts(const std::string& key, std::vector<std::size_t>& out) {
    if (auto* v = raw(key)) {
      if (!v->is_array()) return fail(key, "expected an array of non-negative integers");
      std::vector<std::size_t> r;
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) return fail(key, "expected an array of non-negative integers");
        r.push_back(e.get<std::size_t>());
      }
      out = std::move(r);
    }
  }

  template <class Parse, class T>
  void parsed(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!has(key)) {
      seen_.insert(key);
      return;
    }
    text(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

  void fail(const std::string& key, const std::string& msg) {
    errors_.push_back((key.empty() ? path_ : join(key)) + ": " + msg);
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const nlohmann::json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

inline void read_step_schedule(Section s, StepSchedule& out) {
  s.real("base", out.base);
  s.reals("drops", out.drops);
  s.real("factor", out.factor);
}

inline void check(std::vector<std::string>& errors, bool ok, const std::string& msg) {
  if (!ok) errors.push_back(msg);
}

}  // namespace detail

// Sets `dotted.key` to `value`, which is parsed as JSON when possible and
// taken as a plain string otherwise ("train.mode=simplified").
inline void apply_override(nlohmann::json& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + key + "' has an empty key segment");
    if (!node->is_object()) {
      throw ConfigError("override '" + key + "': '" + part + "' is inside a non-object value");
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

// Typed view of a config document. All problems are gathered and thrown
// together as one ConfigError before anything runs.
inline RunConfig parse_config(const nlohmann::json& doc) {
  using detail::Section;
  std::vector<std::string> errors;
  RunConfig c;
  {
    Section root(&doc, "", errors);
    root.seed("seed", c.seed);
    {
      Section d = root.sub("data");
      d.text("source", c.data.source);
      d.real("train_fraction", c.data.train_fraction);
      d.seed("split_seed", c.data.split_seed);
      {
        Section t = d.sub("tiered");
        auto& ts = c.data.tiered;
        t.count("feature_dim", ts.feature_dim);
        t.count("num_classes", ts.num_classes);
        t.reals("separation", ts.separation);
        t.reals("noise", ts.noise);
        t.counts("clusters_per_class", ts.clusters_per_class);
        t.counts("samples", ts.samples);
        t.seed("seed", ts.seed);
      }
      {
        Section s = d.sub("csv");
        s.text("path", c.data.csv_path);
        s.text("label_column", c.data.csv.label_column);
        s.text("tier_column", c.data.csv.tier_column);
        s.count("num_classes", c.data.csv.num_classes);
      }
      {
        Section s = d.sub("idx");
        s.text("images", c.data.idx_images);
        s.text("labels", c.data.idx_labels);
        s.count("num_classes", c.data.idx_num_classes);
      }
    }
    {
      Section m = root.sub("model");
      if (auto* h = m.raw("classifier_hidden")) {
        bool ok = h->is_array() && !h->empty();
        std::vector<std::vector<std::size_t>> widths;
        if (ok) {
          for (const auto& layer : *h) {
            if (!layer.is_array()) { ok = false; break; }
            std::vector<std::size_t> w;
            for (const auto& e : layer) {
              if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) { ok = false; break; }
              w.push_back(e.get<std::size_t>());
            }
            widths.push_back(std::move(w));
          }
        }
        if (ok) c.model.classifier_hidden = std::move(widths);
        else m.fail("classifier_hidden", "expected a non-empty array of arrays of positive widths");
      }
      m.count("policy_hidden", c.model.policy_hidden);
      m.seed("seed", c.model.seed);
      if (auto* costs = m.raw("costs")) {
        if (costs->is_string()) {
          const auto s = costs->get<std::string>();
          if (s == "measured") {
            c.model.cost_source = "measured";
          } else if (cost_presets().count(s)) {
            c.model.cost_source = "preset";
            c.model.cost_preset = s;
          } else {
            m.fail("costs", "unknown cost schedule '" + s + "' (measured, a preset name, or a list)");
          }
        } else if (costs->is_array()) {
          std::vector<double> raw;
          bool ok = true;
          for (const auto& e : *costs) {
            if (!e.is_number()) ok = false;
            else raw.push_back(e.get<double>());
          }
          if (ok) {
            c.model.cost_source = "list";
            c.model.raw_costs = std::move(raw);
          } else {
            m.fail("costs", "expected numbers");
          }
        } else {
          m.fail("costs", "expected \"measured\", a preset name, or a list of raw costs");
        }
      }
    }
    {
      Section p = root.sub("pretrain");
      p.count("epochs", c.pretrain.epochs);
      detail::read_step_schedule(p.sub("lr"), c.pretrain.lr);
      p.real("momentum", c.pretrain.momentum);
      p.count("batch_size", c.pretrain.batch_size);
      p.seed("seed", c.pretrain.seed);
    }
    {
      Section t = root.sub("train");
      if (t.has("alpha")) {
        double a = -1.0;
        t.real("alpha", a);
        c.train.alpha = a;
        c.alpha_set = true;
      } else {
        t.raw("alpha");
      }
      t.parsed("mode", c.train.mode, parse_train_mode);
      t.count("epochs", c.train.epochs);
      t.count("batch_size", c.train.batch_size);
      t.real("momentum", c.train.momentum);
      detail::read_step_schedule(t.sub("classifier_lr"), c.train.classifier_lr);
      {
        Section pl = t.sub("policy_lr");
        pl.real("base", c.train.policy_lr.base);
        pl.real("decay", c.train.policy_lr.decay);
        pl.count("every", c.train.policy_lr.every);
      }
      t.parsed("reward_loss", c.train.reward_loss, parse_reward_loss);
      t.parsed("cost_convention", c.train.cost_convention, parse_cost_convention);
      t.seed("seed", c.train.seed);
      t.text("init_checkpoint", c.init_checkpoint);
    }
    {
      Section e = root.sub("eval");
      e.seed("seed", c.eval.seed);
      e.parsed("stop_mode", c.eval.stop_mode, parse_stop_mode);
    }
    {
      Section s = root.sub("sweep");
      s.reals("alphas", c.sweep_alphas);
    }
    {
      Section s = root.sub("calibrate");
      if (s.has("budget")) c.budget_set = true;
      s.real("budget", c.calibrate.budget);
      s.real("tolerance", c.calibrate.tolerance);
      s.real("alpha_min", c.calibrate.alpha_min);
      s.real("alpha_max", c.calibrate.alpha_max);
      s.count("max_iterations", c.calibrate.max_iterations);
    }
    {
      Section g = root.sub("gradcheck");
      g.text("instance", c.gradcheck.instance);
      g.seed("instance_seed", c.gradcheck.instance_seed);
      g.real("alpha", c.gradcheck.alpha);
      g.real("eps", c.gradcheck.eps);
      g.real("tolerance", c.gradcheck.tolerance);
      g.count("rollouts", c.gradcheck.rollouts);
      g.real("z_threshold", c.gradcheck.z_threshold);
      g.seed("seed", c.gradcheck.seed);
    }
  }

  using detail::check;
  const auto& d = c.data;
  check(errors, d.source == "tiered" || d.source == "csv" || d.source == "idx",
        "data.source: expected tiered, csv or idx");
  check(errors, d.train_fraction > 0.0 && d.train_fraction < 1.0,
        "data.train_fraction: must lie in (0, 1)");
  if (d.source == "tiered") {
    try {
      validate(d.tiered);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("data.tiered: ") + e.what());
    }
  }
  if (d.source == "csv") check(errors, !d.csv_path.empty(), "data.csv.path: required for csv data");
  if (d.source == "idx") {
    check(errors, !d.idx_images.empty() && !d.idx_labels.empty(),
          "data.idx: images and labels paths are required for idx data");
  }
  check(errors, !c.model.classifier_hidden.empty() || !c.init_checkpoint.empty(),
        "model.classifier_hidden: at least one classifier is required");
  check(errors, c.model.policy_hidden > 0, "model.policy_hidden: must be positive");
  const std::size_t K = c.model.classifier_hidden.size();
  if (c.model.cost_source == "preset" && K > 0) {
    check(errors, cost_preset(c.model.cost_preset).size() == K,
          "model.costs: preset '" + c.model.cost_preset + "' has " +
              std::to_string(cost_preset(c.model.cost_preset).size()) + " stages, model has " +
              std::to_string(K));
  }
  if (c.model.cost_source == "list") {
    try {
      validate_raw_costs(c.model.raw_costs, K);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("model.costs: ") + e.what());
    }
  }
  check(errors, c.pretrain.lr.base > 0.0, "pretrain.lr.base: must be positive");
  check(errors, c.pretrain.lr.factor > 0.0 && c.pretrain.lr.factor <= 1.0,
        "pretrain.lr.factor: must lie in (0, 1]");
  check(errors, c.pretrain.momentum >= 0.0 && c.pretrain.momentum < 1.0,
        "pretrain.momentum: must lie in [0, 1)");
  check(errors, c.pretrain.batch_size > 0, "pretrain.batch_size: must be positive");
  if (c.alpha_set) {
    check(errors, c.train.alpha >= 0.0 && std::isfinite(c.train.alpha), "train.alpha: must be >= 0");
  }
  {
    TrainConfig t = c.train;
    t.alpha = 0.0;
    try {
      validate(t);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("train: ") + e.what());
    }
  }
  check(errors, c.train.epochs > 0, "train.epochs: must be positive");
  for (double a : c.sweep_alphas) {
    check(errors, a >= 0.0 && std::isfinite(a), "sweep.alphas: every alpha must be >= 0");
  }
  check(errors, c.gradcheck.instance == "canonical" || c.gradcheck.instance == "config",
        "gradcheck.instance: expected canonical or config");
  check(errors, c.gradcheck.eps > 0.0, "gradcheck.eps: must be positive");

  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " configuration error(s):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

// Fully resolved config, defaults included. Its compact dump is the
// canonical form hashed into the run digest.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  auto& d = j["data"];
  d["source"] = c.data.source;
  d["train_fraction"] = c.data.train_fraction;
  d["split_seed"] = c.data.split_seed;
  if (c.data.source == "tiered") {
    const auto& t = c.data.tiered;
    d["tiered"] = {{"feature_dim", t.feature_dim},   {"num_classes", t.num_classes},
                   {"separation", t.separation},     {"noise", t.noise},
                   {"clusters_per_class", t.clusters_per_class},
                   {"samples", t.samples},           {"seed", t.seed}};
  } else if (c.data.source == "csv") {
    d["csv"] = {{"path", c.data.csv_path},
                {"label_column", c.data.csv.label_column},
                {"tier_column", c.data.csv.tier_column},
                {"num_classes", c.data.csv.num_classes}};
  } else {
    d["idx"] = {{"images", c.data.idx_images},
                {"labels", c.data.idx_labels},
                {"num_classes", c.data.idx_num_classes}};
  }
  auto& m = j["model"];
  m["classifier_hidden"] = c.model.classifier_hidden;
  m["policy_hidden"] = c.model.policy_hidden;
  m["seed"] = c.model.seed;
  if (c.model.cost_source == "list") m["costs"] = c.model.raw_costs;
  else if (c.model.cost_source == "preset") m["costs"] = c.model.cost_preset;
  else m["costs"] = "measured";
  auto step = [](const StepSchedule& s) {
    return nlohmann::json{{"base", s.base}, {"drops", s.drops}, {"factor", s.factor}};
  };
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", step(c.pretrain.lr)},
                   {"momentum", c.pretrain.momentum},
                   {"batch_size", c.pretrain.batch_size},
                   {"seed", c.pretrain.seed}};
  auto& t = j["train"];
  if (c.alpha_set) t["alpha"] = c.train.alpha;
  t["mode"] = std::string(to_string(c.train.mode));
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["momentum"] = c.train.momentum;
  t["classifier_lr"] = step(c.train.classifier_lr);
  t["policy_lr"] = {{"base", c.train.policy_lr.base},
                    {"decay", c.train.policy_lr.decay},
                    {"every", c.train.policy_lr.every}};
  t["reward_loss"] = std::string(to_string(c.train.reward_loss));
  t["cost_convention"] = std::string(to_string(c.train.cost_convention));
  t["seed"] = c.train.seed;
  if (!c.init_checkpoint.empty()) t["init_checkpoint"] = c.init_checkpoint;
  j["eval"] = {{"seed", c.eval.seed}, {"stop_mode", std::string(to_string(c.eval.stop_mode))}};
  j["sweep"] = {{"alphas", c.sweep_alphas}};
  auto& cal = j["calibrate"];
  if (c.budget_set) cal["budget"] = c.calibrate.budget;
  cal["tolerance"] = c.calibrate.tolerance;
  cal["alpha_min"] = c.calibrate.alpha_min;
  cal["alpha_max"] = c.calibrate.alpha_max;
  cal["max_iterations"] = c.calibrate.max_iterations;
  j["gradcheck"] = {{"instance", c.gradcheck.instance}, {"instance_seed", c.gradcheck.instance_seed},
                    {"alpha", c.gradcheck.alpha},       {"eps", c.gradcheck.eps},
                    {"tolerance", c.gradcheck.tolerance}, {"rollouts", c.gradcheck.rollouts},
                    {"z_threshold", c.gradcheck.z_threshold}, {"seed", c.gradcheck.seed}};
  return j;
}

inline std::string config_digest(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

inline nlohmann::json parse_config_text(const std::string& text, const std::string& origin) {
  auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(origin + ": not valid JSON");
  if (!doc.is_object()) throw ConfigError(origin + ": top level must be an object");
  return doc;
}

// Reads a config file (empty path: all defaults) and applies overrides in
// order.
inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::string text;
    try {
      text = read_text_file(path);
    } catch (const FormatError&) {
      throw ConfigError("cannot read config '" + path.string() + "'");
    }
    doc = parse_config_text(text, path.string());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

// Builds the datasets named by the config and splits them.
inline Split load_data(const RunConfig& c) {
  Dataset ds;
  if (c.data.source == "tiered") {
    TierSpec spec = c.data.tiered;
    spec.seed = c.derived(spec.seed);
    ds = gen_tiered(spec);
  } else if (c.data.source == "csv") {
    ds = load_csv(c.data.csv_path, c.data.csv);
  } else {
    ds = load_idx(c.data.idx_images, c.data.idx_labels, c.data.idx_num_classes);
  }
  validate(ds);
  return split_dataset(ds, c.data.train_fraction, c.derived(c.data.split_seed));
}

inline CascadeModel build_model(const RunConfig& c, const Dataset& reference) {
  CascadeArchitecture arch;
  arch.input_dim = reference.dim();
  arch.num_classes = reference.num_classes;
  arch.classifier_hidden = c.model.classifier_hidden;
  arch.policy_hidden = c.model.policy_hidden;
  auto m = build_cascade(arch, c.derived(c.model.seed));
  if (c.model.cost_source == "preset") set_raw_costs(m, cost_preset(c.model.cost_preset));
  else if (c.model.cost_source == "list") set_raw_costs(m, c.model.raw_costs);
  return m;
}

inline PretrainConfig effective_pretrain(const RunConfig& c) {
  PretrainConfig p = c.pretrain;
  p.seed = c.derived(p.seed);
  return p;
}

inline TrainConfig effective_train(const RunConfig& c, std::optional<double> alpha = std::nullopt) {
  TrainConfig t = c.train;
  t.seed = c.derived(t.seed);
  if (alpha) t.alpha = *alpha;
  return t;
}

inline EvalOptions effective_eval(const RunConfig& c) {
  return {c.derived(c.eval.seed), c.eval.stop_mode};
}

}  // namespace cascade
