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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cascade/data.hpp"
#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/model.hpp"
#include "cascade/nn.hpp"
#include "cascade/stopping.hpp"

namespace cascade {

// One GradientSet per classifier and per policy.
struct CascadeGradient {
  std::vector<GradientSet> classifiers;
  std::vector<GradientSet> policies;

  static CascadeGradient zeros_like(const CascadeModel& m) {
    CascadeGradient g;
    for (const auto& c : m.classifiers) g.classifiers.push_back(GradientSet::zeros_like(c));
    for (const auto& p : m.policies) g.policies.push_back(GradientSet::zeros_like(p));
    return g;
  }

  CascadeGradient& add_scaled(const CascadeGradient& o, double s) {
    for (std::size_t i = 0; i < classifiers.size(); ++i) classifiers[i].add_scaled(o.classifiers[i], s);
    for (std::size_t i = 0; i < policies.size(); ++i) policies[i].add_scaled(o.policies[i], s);
    return *this;
  }

  CascadeGradient& scale(double s) {
    for (auto& c : classifiers) c.scale(s);
    for (auto& p : policies) p.scale(s);
    return *this;
  }

  double squared_norm(bool include_classifiers = true) const {
    double s = 0.0;
    if (include_classifiers)
      for (const auto& c : classifiers) s += c.squared_norm();
    for (const auto& p : policies) s += p.squared_norm();
    return s;
  }

  bool all_finite() const {
    for (const auto& c : classifiers)
      if (!c.all_finite()) return false;
    for (const auto& p : policies)
      if (!p.all_finite()) return false;
    return true;
  }

  // Classifiers in stage order, then policies; within a network, layer by
  // layer with weights (row-major) before bias.
  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto& c : classifiers) c.append_flat(out);
    for (const auto& p : policies) p.append_flat(out);
    return out;
  }
};

// Raw pointers to every parameter in CascadeGradient::flatten order.
inline std::vector<double*> parameter_pointers(CascadeModel& m) {
  std::vector<double*> ptrs;
  auto add = [&ptrs](Network& net) {
    for (auto& l : net.layers) {
      for (double& w : l.weights.data) ptrs.push_back(&w);
      for (double& b : l.bias) ptrs.push_back(&b);
    }
  };
  for (auto& c : m.classifiers) add(c);
  for (auto& p : m.policies) add(p);
  return ptrs;
}

inline void check_rollout_current(const CascadeModel& m, const Rollout& r) {
  auto stale = [](const Network& net, const ForwardCache& c) {
    return c.net != &net || c.version != net.version;
  };
  if (r.stop_index >= m.stages() || r.classifier_caches.size() != r.stop_index + 1) {
    throw ContractError("sample_gradient: rollout does not match this cascade");
  }
  for (std::size_t t = 0; t < r.classifier_caches.size(); ++t) {
    if (stale(m.classifiers[t], r.classifier_caches[t])) {
      throw ContractError("sample_gradient: rollout was produced by different parameters");
    }
  }
  for (std::size_t t = 0; t < r.policy_caches.size(); ++t) {
    if (stale(m.policies[t], r.policy_caches[t])) {
      throw ContractError("sample_gradient: rollout was produced by different parameters");
    }
  }
}

// Adds scale * grad log p(trajectory) to `g`, where
//   log p = sum_{t<k} log(1 - pi_t) + log pi_k [k < K] + log C_k(y_hat | x).
// The observation s_t = C_t(.|x) feeds policy t, so policy terms also flow
// back into classifiers 1..k. Networks past the stop index get nothing.
inline void accumulate_score(const CascadeModel& m, const Rollout& r, bool include_classifiers,
                             double scale, CascadeGradient& g) {
  const std::size_t k = r.stop_index;
  std::vector<std::vector<double>> dclf(k + 1, std::vector<double>(m.num_classes, 0.0));
  for (std::size_t t = 0; t < r.policy_caches.size(); ++t) {
    const std::size_t action = t < k ? 1 : 0;  // head[0] = stop, head[1] = continue
    const auto dz = log_prob_grad(r.policy_heads[t], action);
    const auto ds = backward_accumulate(m.policies[t], r.policy_caches[t], dz, g.policies[t], scale);
    if (include_classifiers) dclf[t] = softmax_vjp(r.observations[t], ds);
  }
  if (!include_classifiers) return;
  const auto dlabel = log_prob_grad(r.observations[k], r.sampled_label);
  for (std::size_t i = 0; i < dlabel.size(); ++i) dclf[k][i] += scale * dlabel[i];
  for (std::size_t t = 0; t <= k; ++t) {
    backward_accumulate(m.classifiers[t], r.classifier_caches[t], dclf[t], g.classifiers[t]);
  }
}

inline CascadeGradient score_gradient(const CascadeModel& m, const Rollout& r,
                                      bool include_classifiers = true) {
  check_rollout_current(m, r);
  auto g = CascadeGradient::zeros_like(m);
  accumulate_score(m, r, include_classifiers, 1.0, g);
  return g;
}

// Under the log loss the reward itself depends on C_k, contributing
// grad R = grad log C_k(y|x) (zero where the probability floor is active).
inline void accumulate_reward_pathwise(const CascadeModel& m, const Rollout& r, RewardLoss loss,
                                       double scale, CascadeGradient& g) {
  if (loss != RewardLoss::Log) return;
  const std::size_t k = r.stop_index;
  if (r.observations[k][r.true_label] <= kProbFloor) return;
  const auto d = log_prob_grad(r.observations[k], r.true_label);
  backward_accumulate(m.classifiers[k], r.classifier_caches[k], d, g.classifiers[k], scale);
}

struct GradEstimate {
  CascadeGradient gradient;
  double reward = 0.0;
  double baseline = 0.0;
};

// grad log p(trajectory) * (R - b), plus the reward's own gradient under
// the log loss.
inline GradEstimate sample_gradient(const CascadeModel& m, const Rollout& r, double baseline,
                                    RewardLoss loss = RewardLoss::ZeroOne,
                                    bool include_classifiers = true) {
  check_rollout_current(m, r);
  GradEstimate est{CascadeGradient::zeros_like(m), r.reward, baseline};
  accumulate_score(m, r, include_classifiers, r.reward - baseline, est.gradient);
  if (include_classifiers) accumulate_reward_pathwise(m, r, loss, 1.0, est.gradient);
  return est;
}

// Constant baseline minimizing the summed variance of g_i (R_i - b):
// b = sum g_i R_i / sum g_i with g_i = |grad log p_i|^2. Falls back to the
// mean return when the weights vanish.
inline double minibatch_baseline(std::span<const double> returns,
                                 std::span<const double> grad_sq_norms) {
  if (returns.empty()) throw ConfigError("minibatch_baseline: empty batch");
  if (returns.size() != grad_sq_norms.size()) {
    throw ConfigError("minibatch_baseline: returns and weights differ in length");
  }
  double num = 0.0, den = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    num += grad_sq_norms[i] * returns[i];
    den += grad_sq_norms[i];
    mean += returns[i];
  }
  if (den < 1e-12) return mean / static_cast<double>(returns.size());
  return num / den;
}

// Per-sample version of minibatch_baseline: sample i uses the same
// formula over the other B-1 samples of its minibatch. A baseline that
// includes the sample's own return is correlated with its score and
// biases the estimate by O(1/B); leaving it out keeps the estimate
// unbiased. A batch of one gets b = 0.
inline std::vector<double> leave_one_out_baselines(std::span<const double> returns,
                                                   std::span<const double> grad_sq_norms) {
  if (returns.empty()) throw ConfigError("minibatch_baseline: empty batch");
  if (returns.size() != grad_sq_norms.size()) {
    throw ConfigError("minibatch_baseline: returns and weights differ in length");
  }
  const std::size_t n = returns.size();
  std::vector<double> b(n, 0.0);
  if (n == 1) return b;
  double num = 0.0, den = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += grad_sq_norms[i] * returns[i];
    den += grad_sq_norms[i];
    sum += returns[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double d = den - grad_sq_norms[i];
    b[i] = d < 1e-12 ? (sum - returns[i]) / static_cast<double>(n - 1)
                     : (num - grad_sq_norms[i] * returns[i]) / d;
  }
  return b;
}

inline std::vector<double> policy_sq_norms(const std::vector<CascadeGradient>& scores) {
  std::vector<double> g;
  g.reserve(scores.size());
  for (const auto& s : scores) g.push_back(s.squared_norm(false));
  return g;
}

inline std::vector<double> classifier_sq_norms(const std::vector<CascadeGradient>& scores) {
  std::vector<double> g;
  g.reserve(scores.size());
  for (const auto& s : scores) {
    double n = 0.0;
    for (const auto& c : s.classifiers) n += c.squared_norm();
    g.push_back(n);
  }
  return g;
}

// Leave-one-out baselines, weighted separately over the policy block and
// the classifier block of the score vectors. Classifier scores are far
// larger than policy scores, so one shared weighting would tune the
// policy baseline to the classifiers' variance.
struct BlockBaselines {
  std::vector<double> policy;
  std::vector<double> classifier;
};

inline BlockBaselines block_baselines(std::span<const double> returns,
                                      const std::vector<CascadeGradient>& scores) {
  return {leave_one_out_baselines(returns, policy_sq_norms(scores)),
          leave_one_out_baselines(returns, classifier_sq_norms(scores))};
}

// g += score_i * (R_i - b_i), block by block.
inline void add_baselined(CascadeGradient& g, const CascadeGradient& score, double ret,
                          const BlockBaselines& b, std::size_t i) {
  for (std::size_t t = 0; t < g.policies.size(); ++t) {
    g.policies[t].add_scaled(score.policies[t], ret - b.policy[i]);
  }
  for (std::size_t t = 0; t < g.classifiers.size(); ++t) {
    g.classifiers[t].add_scaled(score.classifiers[t], ret - b.classifier[i]);
  }
}

// lr = base * factor^(number of drop points reached); drop points are
// fractions of the total epoch count.
struct StepSchedule {
  double base = 0.01;
  std::vector<double> drops{0.5, 0.75};
  double factor = 0.1;

  double at(std::size_t epoch, std::size_t total_epochs) const {
    double lr = base;
    for (double d : drops) {
      if (static_cast<double>(epoch) >= std::floor(d * static_cast<double>(total_epochs))) lr *= factor;
    }
    return lr;
  }
};

// lr = base * decay^floor(epoch / every).
struct ExponentialSchedule {
  double base = 0.05;
  double decay = 0.9;
  std::size_t every = 2;

  double at(std::size_t epoch) const {
    return base * std::pow(decay, static_cast<double>(epoch / every));
  }
};

enum class TrainMode { Joint, Simplified };

inline std::string_view to_string(TrainMode m) {
  return m == TrainMode::Joint ? "joint" : "simplified";
}
inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "joint") return TrainMode::Joint;
  if (s == "simplified") return TrainMode::Simplified;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected joint|simplified)");
}

struct TrainConfig {
  double alpha = 0.0;
  StepSchedule classifier_lr{};
  ExponentialSchedule policy_lr{};
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  RewardLoss reward_loss = RewardLoss::ZeroOne;
  CostConvention cost_convention = CostConvention::Inclusive;
  TrainMode mode = TrainMode::Joint;
  std::uint64_t seed = 0;

  RewardConfig reward() const { return {alpha, reward_loss, cost_convention}; }
};

inline void validate(const TrainConfig& c) {
  if (!(c.alpha >= 0.0) || !std::isfinite(c.alpha)) throw ConfigError("alpha must be finite and >= 0");
  if (!(c.classifier_lr.base > 0.0) || !(c.policy_lr.base > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(c.policy_lr.decay > 0.0 && c.policy_lr.decay <= 1.0) ||
      !(c.classifier_lr.factor > 0.0 && c.classifier_lr.factor <= 1.0)) {
    throw ConfigError("decay factors must lie in (0, 1]");
  }
  if (c.policy_lr.every == 0) throw ConfigError("policy lr decay interval must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double amortized_flops = 0.0;
  std::vector<double> stop_histogram;
  double baseline_value = 0.0;  // mean over the epoch's minibatches
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& log, std::size_t stages) {
  std::vector<std::string> cols{"epoch", "mean_reward", "accuracy", "amortized_flops"};
  for (std::size_t k = 0; k < stages; ++k) cols.push_back("stop_histogram_" + std::to_string(k + 1));
  cols.push_back("baseline_value");
  CsvWriter w("cascade-train-metrics", 1, cols);
  for (const auto& e : log) {
    std::vector<std::string> row{std::to_string(e.epoch), format_double(e.mean_reward),
                                 format_double(e.accuracy), format_double(e.amortized_flops)};
    for (double h : e.stop_histogram) row.push_back(format_double(h));
    row.push_back(format_double(e.baseline_value));
    w.row(row);
  }
  return w.str();
}

namespace detail {

inline void ascend(Network& net, GradientSet& grad, double lr, double momentum, MomentumState& st) {
  grad.scale(-1.0);
  sgd_momentum_step(net, grad, lr, momentum, st);
}

}  // namespace detail

// REINFORCE training. For each minibatch every sample is rolled out once
// (rng stream keyed by seed, epoch and sample index), each sample's
// baselines come from the rest of its minibatch, and the averaged estimate
// is applied as an ascent step. The logged baseline_value is the
// full-minibatch policy baseline. Simplified mode leaves the
// classifiers untouched.
inline std::vector<EpochMetrics> train(CascadeModel& m, const Dataset& data,
                                       const TrainConfig& cfg,
                                       const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  validate(cfg);
  validate(m);
  validate(data);
  if (data.dim() != m.input_dim()) throw DimensionError("train: dataset dim != model input dim");
  if (cfg.mode == TrainMode::Simplified && !m.classifiers_pretrained) {
    throw ConfigError("simplified mode requires pretrained classifiers");
  }
  const bool joint = cfg.mode == TrainMode::Joint;
  const std::size_t K = m.stages();
  std::vector<MomentumState> clf_state(K), pol_state(m.policies.size());
  RolloutOptions opt;
  opt.reward = cfg.reward();
  std::vector<EpochMetrics> log;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double plr = cfg.policy_lr.at(epoch);
    const double clr = cfg.classifier_lr.at(epoch, cfg.epochs);
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.stop_histogram.assign(K, 0.0);
    std::size_t seen = 0, hits = 0, batches = 0;
    double reward_sum = 0.0, flops_sum = 0.0, baseline_sum = 0.0;

    for (const auto& batch : epoch_batches(data.size(), cfg.batch_size, cfg.seed, epoch)) {
      auto grad = CascadeGradient::zeros_like(m);
      std::vector<CascadeGradient> scores;
      std::vector<double> returns;
      scores.reserve(batch.size());
      for (std::size_t i : batch) {
        Rng rng(mix_seed(mix_seed(cfg.seed, 0x7EA1), epoch, i));
        const Rollout r = rollout(m, data.x(i), data.labels[i], rng, opt);
        scores.push_back(score_gradient(m, r, joint));
        returns.push_back(r.reward);
        if (joint) accumulate_reward_pathwise(m, r, cfg.reward_loss, 1.0, grad);
        ++seen;
        hits += r.sampled_label == r.true_label;
        reward_sum += r.reward;
        flops_sum += r.visited_raw_flops;
        em.stop_histogram[r.stop_index] += 1.0;
      }
      baseline_sum += minibatch_baseline(returns, policy_sq_norms(scores));
      ++batches;
      const auto b = block_baselines(returns, scores);
      for (std::size_t s = 0; s < scores.size(); ++s) add_baselined(grad, scores[s], returns[s], b, s);
      grad.scale(1.0 / static_cast<double>(batch.size()));
      if (!grad.all_finite()) throw NumericError("train: non-finite gradient at epoch " + std::to_string(epoch + 1));
      for (std::size_t t = 0; t < m.policies.size(); ++t) {
        detail::ascend(m.policies[t], grad.policies[t], plr, cfg.momentum, pol_state[t]);
      }
      if (joint) {
        for (std::size_t t = 0; t < K; ++t) {
          detail::ascend(m.classifiers[t], grad.classifiers[t], clr, cfg.momentum, clf_state[t]);
        }
      }
    }
    for (const auto& net : m.policies)
      if (!net.all_finite()) throw NumericError("train: non-finite policy parameters");
    for (const auto& net : m.classifiers)
      if (!net.all_finite()) throw NumericError("train: non-finite classifier parameters");

    const double n = static_cast<double>(seen);
    em.mean_reward = reward_sum / n;
    em.accuracy = static_cast<double>(hits) / n;
    em.amortized_flops = flops_sum / n;
    for (double& h : em.stop_histogram) h /= n;
    em.baseline_value = baseline_sum / static_cast<double>(batches);
    log.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  return log;
}

struct PretrainConfig {
  std::size_t epochs = 30;
  StepSchedule lr{0.05, {0.5, 0.75}, 0.1};
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  std::size_t classifier = 0;  // 1-based
  double loss = 0.0;
  double accuracy = 0.0;
};

inline std::string pretrain_csv(const std::vector<PretrainEpoch>& log) {
  CsvWriter w("cascade-pretrain-metrics", 1, {"epoch", "classifier", "loss", "accuracy"});
  for (const auto& e : log) {
    w.row({std::to_string(e.epoch), std::to_string(e.classifier), format_double(e.loss),
           format_double(e.accuracy)});
  }
  return w.str();
}

// Supervised cross-entropy training of each classifier on its own, by
// minibatch SGD with momentum. Policies are not touched.
inline std::vector<PretrainEpoch> pretrain_classifiers(CascadeModel& m, const Dataset& data,
                                                       const PretrainConfig& cfg) {
  validate(m);
  validate(data);
  if (data.dim() != m.input_dim()) throw DimensionError("pretrain: dataset dim != model input dim");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(cfg.lr.base > 0.0)) throw ConfigError("pretrain learning rate must be positive");
  std::vector<PretrainEpoch> log;
  for (std::size_t k = 0; k < m.stages(); ++k) {
    Network& net = m.classifiers[k];
    MomentumState state;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double lr = cfg.lr.at(epoch, cfg.epochs);
      double loss_sum = 0.0;
      std::size_t hits = 0;
      for (const auto& batch : epoch_batches(data.size(), cfg.batch_size, mix_seed(cfg.seed, k), epoch)) {
        auto grad = GradientSet::zeros_like(net);
        for (std::size_t i : batch) {
          auto fr = net_forward(net, data.x(i));
          const std::size_t y = data.labels[i];
          loss_sum += cross_entropy(fr.probs, y);
          hits += argmax(fr.probs) == y;
          auto d = fr.probs;
          d[y] -= 1.0;
          backward_accumulate(net, fr.cache, d, grad);
        }
        if (!std::isfinite(loss_sum)) {
          throw NumericError("pretrain: non-finite loss for classifier " + std::to_string(k + 1) +
                             " at epoch " + std::to_string(epoch + 1));
        }
        grad.scale(1.0 / static_cast<double>(batch.size()));
        sgd_momentum_step(net, grad, lr, cfg.momentum, state);
      }
      if (!net.all_finite()) throw NumericError("pretrain: classifier diverged");
      const double n = static_cast<double>(data.size());
      log.push_back({epoch + 1, k + 1, loss_sum / n, static_cast<double>(hits) / n});
    }
  }
  m.classifiers_pretrained = true;
  return log;
}

struct CalibrationConfig {
  double budget = 0.0;      // normalized amortized cost
  double tolerance = 0.1;   // relative to the budget
  double alpha_min = 1e-4;
  double alpha_max = 1.0;
  std::size_t max_iterations = 8;
};

struct CalibrationStep {
  std::string phase;  // bracket-low, bracket-high, bisect
  double alpha = 0.0;
  double cost = 0.0;
};

struct CalibrationResult {
  double alpha = 0.0;
  double cost = 0.0;
  bool converged = false;
  std::vector<CalibrationStep> trace;
};

inline std::string calibration_csv(const CalibrationResult& r) {
  CsvWriter w("cascade-calibration-trace", 1, {"step", "phase", "alpha", "amortized_cost"});
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    w.row({std::to_string(i + 1), r.trace[i].phase, format_double(r.trace[i].alpha),
           format_double(r.trace[i].cost)});
  }
  return w.str();
}

// Bisection on log(alpha) for the penalty whose trained model meets an
// amortized cost budget. `cost_at(alpha)` trains and measures; it should
// be non-increasing in alpha. `cost_floor` is the cheapest attainable cost
// (the first stage's normalized cost).
inline CalibrationResult calibrate_alpha(const std::function<double(double)>& cost_at,
                                         const CalibrationConfig& cfg, double cost_floor) {
  if (!(cfg.alpha_min > 0.0 && cfg.alpha_max > cfg.alpha_min)) {
    throw ConfigError("calibrate: need 0 < alpha_min < alpha_max");
  }
  if (!(cfg.tolerance > 0.0)) throw ConfigError("calibrate: tolerance must be positive");
  if (cfg.budget < cost_floor) {
    throw ConfigError("calibrate: budget " + format_double(cfg.budget) +
                      " is below the cheapest stage cost " + format_double(cost_floor));
  }
  CalibrationResult res;
  auto within = [&](double c) { return std::abs(c - cfg.budget) <= cfg.tolerance * cfg.budget; };
  const double c_lo = cost_at(cfg.alpha_min);
  res.trace.push_back({"bracket-low", cfg.alpha_min, c_lo});
  if (c_lo <= cfg.budget) {
    res.alpha = cfg.alpha_min;
    res.cost = c_lo;
    res.converged = true;
    return res;
  }
  const double c_hi = cost_at(cfg.alpha_max);
  res.trace.push_back({"bracket-high", cfg.alpha_max, c_hi});
  if (c_hi > cfg.budget && !within(c_hi)) {
    throw ConfigError("calibrate: bracket does not straddle the budget (cost " + format_double(c_hi) +
                      " at alpha_max " + format_double(cfg.alpha_max) + ")");
  }
  double lo = cfg.alpha_min, hi = cfg.alpha_max;
  res.alpha = hi;
  res.cost = c_hi;
  res.converged = within(c_hi);
  for (std::size_t it = 0; it < cfg.max_iterations && !res.converged; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double c = cost_at(mid);
    res.trace.push_back({"bisect", mid, c});
    if (within(c) || c <= cfg.budget) {
      res.alpha = mid;
      res.cost = c;
      res.converged = within(c);
    }
    if (c > cfg.budget) lo = mid;
    else hi = mid;
  }
  return res;
}

}  // namespace cascade
