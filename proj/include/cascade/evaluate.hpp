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

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade/data.hpp"
#include "cascade/io.hpp"
#include "cascade/model.hpp"
#include "cascade/stopping.hpp"

namespace cascade {

struct EvalOptions {
  std::uint64_t seed = 0;
  StopMode stop_mode = StopMode::Sample;
};

// Per-sample outcome of an evaluation pass. Everything in EvalReport can
// be recomputed from these records and the raw cost schedule.
struct EvalRecord {
  std::size_t stop_index = 0;
  std::size_t prediction = 0;
  std::size_t label = 0;
  std::vector<std::size_t> classifier_predictions;  // argmax of every stage
  std::optional<std::size_t> tier;
  std::size_t classifier_runs = 0;
};

struct EvalReport {
  std::size_t num_samples = 0;
  double accuracy = 0.0;
  double amortized_flops = 0.0;  // mean raw FLOPs actually executed
  double amortized_cost = 0.0;   // same, in normalized schedule units
  std::vector<double> raw_costs;
  std::vector<std::size_t> assignment_counts;
  std::vector<double> assignment_histogram;
  // accuracy_matrix[i][j]: accuracy of classifier i on the samples that
  // stopped at j; absent when nothing stopped at j.
  std::vector<std::vector<std::optional<double>>> accuracy_matrix;
  std::vector<double> classifier_accuracy;           // every stage on all samples
  std::vector<std::vector<double>> tier_histogram;   // [tier][stage]
  std::vector<std::size_t> tier_counts;

  std::size_t stages() const { return assignment_counts.size(); }
};

inline EvalRecord evaluate_sample(const CascadeModel& m, std::span<const double> x, std::size_t y,
                                  Rng& rng, StopMode stop_mode) {
  RolloutOptions opt;
  opt.stop_mode = stop_mode;
  opt.label_mode = LabelMode::Argmax;
  ExecutionCounter counter(m.stages());
  const Rollout r = rollout(m, x, y, rng, opt, &counter);
  EvalRecord rec;
  rec.stop_index = r.stop_index;
  rec.prediction = r.sampled_label;
  rec.label = y;
  rec.classifier_runs = counter.total_classifier_runs();
  // Analysis only: every stage's own prediction, not part of the cost.
  for (std::size_t t = 0; t < m.stages(); ++t) {
    rec.classifier_predictions.push_back(
        t <= r.stop_index ? argmax(r.observations[t]) : argmax(observe(m, t, x)));
  }
  return rec;
}

inline std::vector<EvalRecord> evaluate_records(const CascadeModel& m, const Dataset& ds,
                                                const EvalOptions& opt = {}) {
  if (ds.size() == 0) throw ConfigError("evaluate: empty dataset");
  if (ds.dim() != m.input_dim()) throw DimensionError("evaluate: dataset dim != model input dim");
  std::vector<EvalRecord> records;
  records.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Rng rng(mix_seed(opt.seed, i));
    auto rec = evaluate_sample(m, ds.x(i), ds.labels[i], rng, opt.stop_mode);
    if (ds.has_tiers()) rec.tier = ds.tiers[i];
    records.push_back(std::move(rec));
  }
  return records;
}

inline EvalReport summarize(const std::vector<EvalRecord>& records,
                            const std::vector<double>& raw_costs) {
  if (records.empty()) throw ConfigError("evaluate: empty dataset");
  const std::size_t K = raw_costs.size();
  EvalReport rep;
  rep.num_samples = records.size();
  rep.raw_costs = raw_costs;
  rep.assignment_counts.assign(K, 0);
  std::vector<double> cumulative(K);
  for (std::size_t k = 0; k < K; ++k) cumulative[k] = raw_costs[k] + (k ? cumulative[k - 1] : 0.0);
  std::vector<std::vector<std::size_t>> correct(K, std::vector<std::size_t>(K, 0));
  std::vector<std::size_t> stage_correct(K, 0);
  std::size_t hits = 0;
  std::size_t num_tiers = 0;
  for (const auto& r : records)
    if (r.tier) num_tiers = std::max(num_tiers, *r.tier + 1);
  std::vector<std::vector<std::size_t>> tier_stage(num_tiers, std::vector<std::size_t>(K, 0));
  rep.tier_counts.assign(num_tiers, 0);
  double flops = 0.0;
  for (const auto& r : records) {
    ++rep.assignment_counts[r.stop_index];
    hits += r.prediction == r.label;
    flops += cumulative[r.stop_index];
    for (std::size_t i = 0; i < K; ++i) {
      const bool ok = r.classifier_predictions[i] == r.label;
      correct[i][r.stop_index] += ok;
      stage_correct[i] += ok;
    }
    if (r.tier) {
      ++tier_stage[*r.tier][r.stop_index];
      ++rep.tier_counts[*r.tier];
    }
  }
  const double n = static_cast<double>(records.size());
  rep.accuracy = hits / n;
  rep.amortized_flops = flops / n;
  rep.amortized_cost = rep.amortized_flops / raw_costs.back();
  for (std::size_t k = 0; k < K; ++k) {
    rep.assignment_histogram.push_back(rep.assignment_counts[k] / n);
    rep.classifier_accuracy.push_back(stage_correct[k] / n);
  }
  rep.accuracy_matrix.assign(K, std::vector<std::optional<double>>(K));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      if (rep.assignment_counts[j] > 0) {
        rep.accuracy_matrix[i][j] = static_cast<double>(correct[i][j]) / rep.assignment_counts[j];
      }
    }
  }
  for (std::size_t t = 0; t < num_tiers; ++t) {
    std::vector<double> h(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      if (rep.tier_counts[t]) h[k] = static_cast<double>(tier_stage[t][k]) / rep.tier_counts[t];
    }
    rep.tier_histogram.push_back(std::move(h));
  }
  return rep;
}

inline EvalReport evaluate(const CascadeModel& m, const Dataset& ds, const EvalOptions& opt = {}) {
  return summarize(evaluate_records(m, ds, opt), m.raw_costs);
}

// Structured-text form (JSON). Absent matrix cells are null.
inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["format"] = "cascade-eval-report";
  j["version"] = 1;
  j["num_samples"] = r.num_samples;
  j["accuracy"] = r.accuracy;
  j["amortized_flops"] = r.amortized_flops;
  j["amortized_cost"] = r.amortized_cost;
  j["raw_costs"] = r.raw_costs;
  j["assignment_counts"] = r.assignment_counts;
  j["assignment_histogram"] = r.assignment_histogram;
  j["classifier_accuracy"] = r.classifier_accuracy;
  nlohmann::json mat = nlohmann::json::array();
  for (const auto& row : r.accuracy_matrix) {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& c : row) jr.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
    mat.push_back(jr);
  }
  j["accuracy_matrix"] = mat;
  j["tier_histogram"] = r.tier_histogram;
  j["tier_counts"] = r.tier_counts;
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "cascade-eval-report" || j.at("version") != 1) {
      throw FormatError("not a cascade-eval-report v1 document");
    }
    EvalReport r;
    r.num_samples = j.at("num_samples");
    r.accuracy = j.at("accuracy");
    r.amortized_flops = j.at("amortized_flops");
    r.amortized_cost = j.at("amortized_cost");
    r.raw_costs = j.at("raw_costs").get<std::vector<double>>();
    r.assignment_counts = j.at("assignment_counts").get<std::vector<std::size_t>>();
    r.assignment_histogram = j.at("assignment_histogram").get<std::vector<double>>();
    r.classifier_accuracy = j.at("classifier_accuracy").get<std::vector<double>>();
    for (const auto& jr : j.at("accuracy_matrix")) {
      std::vector<std::optional<double>> row;
      for (const auto& c : jr) row.push_back(c.is_null() ? std::nullopt : std::optional<double>(c.get<double>()));
      r.accuracy_matrix.push_back(std::move(row));
    }
    r.tier_histogram = j.at("tier_histogram").get<std::vector<std::vector<double>>>();
    r.tier_counts = j.at("tier_counts").get<std::vector<std::size_t>>();
    const std::size_t K = r.raw_costs.size();
    if (r.assignment_counts.size() != K || r.assignment_histogram.size() != K ||
        r.accuracy_matrix.size() != K) {
      throw FormatError("eval report: inconsistent stage counts");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

// One row per scalar metric.
inline std::string eval_metrics_csv(const EvalReport& r) {
  CsvWriter w("cascade-eval-metrics", 1, {"metric", "value"});
  w.row({"num_samples", std::to_string(r.num_samples)});
  w.row({"accuracy", format_double(r.accuracy)});
  w.row({"amortized_flops", format_double(r.amortized_flops)});
  w.row({"amortized_cost", format_double(r.amortized_cost)});
  for (std::size_t k = 0; k < r.stages(); ++k) {
    w.row({"stop_fraction_" + std::to_string(k + 1), format_double(r.assignment_histogram[k])});
  }
  for (std::size_t k = 0; k < r.stages(); ++k) {
    w.row({"classifier_accuracy_" + std::to_string(k + 1), format_double(r.classifier_accuracy[k])});
  }
  for (std::size_t t = 0; t < r.tier_histogram.size(); ++t) {
    for (std::size_t k = 0; k < r.stages(); ++k) {
      w.row({"tier_" + std::to_string(t + 1) + "_stop_fraction_" + std::to_string(k + 1),
             format_double(r.tier_histogram[t][k])});
    }
  }
  return w.str();
}

// Long-form K x K matrix, 1-based stage ids; absent cells read "NA".
inline std::string accuracy_matrix_csv(const EvalReport& r) {
  CsvWriter w("cascade-accuracy-matrix", 1, {"k_i", "k_j", "accuracy", "count"});
  for (std::size_t i = 0; i < r.stages(); ++i) {
    for (std::size_t j = 0; j < r.stages(); ++j) {
      const auto& c = r.accuracy_matrix[i][j];
      w.row({std::to_string(i + 1), std::to_string(j + 1), c ? format_double(*c) : "NA",
             std::to_string(r.assignment_counts[j])});
    }
  }
  return w.str();
}

inline std::string assignment_histogram_csv(const EvalReport& r) {
  CsvWriter w("cascade-assignment-histogram", 1, {"k", "fraction", "count"});
  for (std::size_t k = 0; k < r.stages(); ++k) {
    w.row({std::to_string(k + 1), format_double(r.assignment_histogram[k]),
           std::to_string(r.assignment_counts[k])});
  }
  return w.str();
}

}  // namespace cascade
