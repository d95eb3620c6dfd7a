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

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/model.hpp"
#include "cascade/nn.hpp"
#include "cascade/rng.hpp"

namespace cascade {

// Which stages the reward charges for when stopping at stage k:
// Inclusive sums F_1..F_k, Exclusive sums F_1..F_{k-1}.
enum class CostConvention { Inclusive, Exclusive };

// Prediction loss inside the reward. ZeroOne charges 1 for a wrong sampled
// label; Log charges -log C_k(y|x) with the probability floored.
enum class RewardLoss { ZeroOne, Log };

enum class StopMode { Sample, Threshold };
enum class LabelMode { Sample, Argmax };

inline std::string_view to_string(CostConvention c) {
  return c == CostConvention::Inclusive ? "inclusive" : "exclusive";
}
inline std::string_view to_string(RewardLoss l) {
  return l == RewardLoss::ZeroOne ? "zero-one" : "log";
}
inline std::string_view to_string(StopMode s) {
  return s == StopMode::Sample ? "sample" : "threshold";
}

inline CostConvention parse_cost_convention(std::string_view s) {
  if (s == "inclusive") return CostConvention::Inclusive;
  if (s == "exclusive") return CostConvention::Exclusive;
  throw ConfigError("unknown cost convention '" + std::string(s) +
                    "' (expected inclusive|exclusive)");
}
inline RewardLoss parse_reward_loss(std::string_view s) {
  if (s == "zero-one") return RewardLoss::ZeroOne;
  if (s == "log") return RewardLoss::Log;
  throw ConfigError("unknown reward loss '" + std::string(s) + "' (expected zero-one|log)");
}
inline StopMode parse_stop_mode(std::string_view s) {
  if (s == "sample") return StopMode::Sample;
  if (s == "threshold") return StopMode::Threshold;
  throw ConfigError("unknown stop mode '" + std::string(s) + "' (expected sample|threshold)");
}

struct RewardConfig {
  double alpha = 0.0;
  RewardLoss loss = RewardLoss::ZeroOne;
  CostConvention convention = CostConvention::Inclusive;
};

// Number of forward passes per network, for early-exit checks.
struct ExecutionCounter {
  std::vector<std::size_t> classifier_runs;
  std::vector<std::size_t> policy_runs;

  explicit ExecutionCounter(std::size_t stages = 0)
      : classifier_runs(stages, 0), policy_runs(stages > 0 ? stages - 1 : 0, 0) {}

  std::size_t total_classifier_runs() const {
    std::size_t n = 0;
    for (auto c : classifier_runs) n += c;
    return n;
  }
};

// s_t(x): the full class-probability output of classifier t (0-based).
inline ForwardResult observe_full(const CascadeModel& m, std::size_t t, std::span<const double> x) {
  if (t >= m.stages()) {
    throw IndexError("observe: stage " + std::to_string(t) + " out of range for " +
                     std::to_string(m.stages()) + " stages");
  }
  return net_forward(m.classifiers[t], x);
}

inline std::vector<double> observe(const CascadeModel& m, std::size_t t, std::span<const double> x) {
  return observe_full(m, t, x).probs;
}

struct PolicyOutput {
  double stop_prob = 1.0;
  std::vector<double> head;  // 2-way softmax, empty at the terminal stage
  ForwardCache cache;
};

inline PolicyOutput stop_probability_full(const CascadeModel& m, std::size_t t,
                                          std::span<const double> observation) {
  if (t >= m.stages()) throw IndexError("stop_probability: stage out of range");
  PolicyOutput out;
  if (t + 1 == m.stages()) return out;  // forced terminal stop
  auto fr = net_forward(m.policies[t], observation);
  out.stop_prob = fr.probs[0];
  out.head = std::move(fr.probs);
  out.cache = std::move(fr.cache);
  return out;
}

inline double stop_probability(const CascadeModel& m, std::size_t t,
                               std::span<const double> observation) {
  return stop_probability_full(m, t, observation).stop_prob;
}

// Pi(k) = pi_k * prod_{t<k} (1 - pi_t). The last entry of stop_probs must
// be exactly 1 so the result is a distribution.
inline std::vector<double> selection_distribution(std::span<const double> stop_probs) {
  if (stop_probs.empty()) throw ContractError("selection_distribution: empty input");
  for (double p : stop_probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ContractError("selection_distribution: stop probability outside [0,1]");
    }
  }
  if (stop_probs.back() != 1.0) {
    throw ContractError("selection_distribution: terminal stop probability must be 1");
  }
  std::vector<double> pi(stop_probs.size());
  double reach = 1.0;
  for (std::size_t k = 0; k < stop_probs.size(); ++k) {
    pi[k] = reach * stop_probs[k];
    reach *= 1.0 - stop_probs[k];
  }
  return pi;
}

inline double cost_sum(std::span<const double> schedule, std::size_t k, CostConvention c) {
  const std::size_t end = c == CostConvention::Inclusive ? k + 1 : k;
  double s = 0.0;
  for (std::size_t t = 0; t < end; ++t) s += schedule[t];
  return s;
}

inline double prediction_loss(std::span<const double> probs_k, std::size_t predicted,
                              std::size_t label, RewardLoss loss) {
  if (label >= probs_k.size()) throw IndexError("reward: label out of range");
  if (loss == RewardLoss::ZeroOne) return predicted == label ? 0.0 : 1.0;
  return cross_entropy(probs_k, label);
}

// R(k, x, y, y_hat) = -L(y_hat, y) - alpha * (cost sum under the convention).
// k is 0-based.
inline double reward(std::size_t k, std::span<const double> probs_k, std::size_t predicted,
                     std::size_t label, const RewardConfig& cfg,
                     std::span<const double> schedule) {
  if (!(cfg.alpha >= 0.0)) throw ConfigError("reward: alpha must be >= 0");
  if (k >= schedule.size()) throw IndexError("reward: stage out of range");
  return -prediction_loss(probs_k, predicted, label, cfg.loss) -
         cfg.alpha * cost_sum(schedule, k, cfg.convention);
}

struct RolloutOptions {
  RewardConfig reward;
  StopMode stop_mode = StopMode::Sample;
  LabelMode label_mode = LabelMode::Sample;
};

// One trajectory through the cascade. Indices are 0-based; stop_probs[k]
// is 1 when k is the last stage.
struct Rollout {
  std::size_t stop_index = 0;
  std::vector<std::vector<double>> observations;
  std::vector<double> stop_probs;
  std::size_t sampled_label = 0;
  std::size_t true_label = 0;
  double reward = 0.0;
  double visited_cost = 0.0;       // normalized, inclusive of stage k
  double visited_raw_flops = 0.0;  // raw, inclusive of stage k

  std::vector<ForwardCache> classifier_caches;       // stages 0..k
  std::vector<std::vector<double>> policy_heads;     // stages 0..min(k, K-2)
  std::vector<ForwardCache> policy_caches;
};

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Runs classifiers in order, stopping at stage t with probability pi_t
// (or when pi_t >= 0.5 in threshold mode). Classifiers after the stop are
// never evaluated.
inline Rollout rollout(const CascadeModel& m, std::span<const double> x, std::size_t y,
                       Rng& rng, const RolloutOptions& opt,
                       ExecutionCounter* counter = nullptr) {
  if (y >= m.num_classes) throw IndexError("rollout: label out of range");
  const std::size_t K = m.stages();
  const auto schedule = m.cost_schedule();
  Rollout r;
  r.true_label = y;
  for (std::size_t t = 0; t < K; ++t) {
    auto obs = observe_full(m, t, x);
    if (counter) ++counter->classifier_runs[t];
    r.visited_cost += schedule[t];
    r.visited_raw_flops += m.raw_costs[t];
    auto pol = stop_probability_full(m, t, obs.probs);
    if (counter && t + 1 < K) ++counter->policy_runs[t];
    bool stop = true;
    if (t + 1 < K) {
      stop = opt.stop_mode == StopMode::Sample ? rng.bernoulli(pol.stop_prob)
                                               : pol.stop_prob >= 0.5;
      r.policy_heads.push_back(std::move(pol.head));
      r.policy_caches.push_back(std::move(pol.cache));
    }
    r.stop_probs.push_back(pol.stop_prob);
    r.observations.push_back(std::move(obs.probs));
    r.classifier_caches.push_back(std::move(obs.cache));
    if (stop) {
      r.stop_index = t;
      break;
    }
  }
  const auto& probs = r.observations.back();
  r.sampled_label = opt.label_mode == LabelMode::Sample ? rng.categorical(probs) : argmax(probs);
  r.reward = reward(r.stop_index, probs, r.sampled_label, y, opt.reward, schedule);
  return r;
}

}  // namespace cascade
