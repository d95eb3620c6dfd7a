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
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cascade/data.hpp"
#include "cascade/error.hpp"
#include "cascade/model.hpp"
#include "cascade/nn.hpp"
#include "cascade/reinforce.hpp"
#include "cascade/stopping.hpp"

namespace cascade {

inline constexpr std::uint64_t kEnumerationGuard = 1'000'000;

inline void check_enumeration_guard(const CascadeModel& m, const Dataset& ds) {
  const double terms = static_cast<double>(m.stages()) * static_cast<double>(m.num_classes) *
                       static_cast<double>(ds.size());
  if (terms > static_cast<double>(kEnumerationGuard)) {
    throw SizeError("exact enumeration needs " + format_double(terms) + " terms, limit is " +
                    std::to_string(kEnumerationGuard));
  }
}

struct ExactObjectiveReport {
  double objective = 0.0;
  std::vector<double> per_sample_reward;
  std::vector<std::vector<double>> selection;  // Pi(.|x) per sample
  double expected_cost = 0.0;                  // normalized, inclusive
  double expected_raw_flops = 0.0;
};

namespace detail {

struct SampleEnumeration {
  std::vector<ForwardResult> classifiers;
  std::vector<PolicyOutput> policies;
  std::vector<double> stop_probs;
  std::vector<double> selection;
  std::vector<double> stage_value;  // sum_y C_k(y|x) R(k, x, y_true, y)
};

inline SampleEnumeration enumerate_sample(const CascadeModel& m, std::span<const double> x,
                                          std::size_t y, const RewardConfig& cfg,
                                          std::span<const double> schedule) {
  const std::size_t K = m.stages();
  SampleEnumeration e;
  for (std::size_t t = 0; t < K; ++t) {
    e.classifiers.push_back(net_forward(m.classifiers[t], x));
    e.policies.push_back(stop_probability_full(m, t, e.classifiers[t].probs));
    e.stop_probs.push_back(e.policies[t].stop_prob);
  }
  e.selection = selection_distribution(e.stop_probs);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& probs = e.classifiers[k].probs;
    double v = 0.0;
    for (std::size_t yhat = 0; yhat < m.num_classes; ++yhat) {
      v += probs[yhat] * reward(k, probs, yhat, y, cfg, schedule);
    }
    e.stage_value.push_back(v);
  }
  return e;
}

}  // namespace detail

// J = mean_x sum_k Pi(k|x) sum_y_hat C_k(y_hat|x) R(k, x, y, y_hat), by
// full enumeration of stop indices and labels.
inline ExactObjectiveReport exact_objective(const CascadeModel& m, const Dataset& ds,
                                            const RewardConfig& cfg) {
  validate(m);
  validate(ds);
  check_enumeration_guard(m, ds);
  const auto schedule = m.cost_schedule();
  ExactObjectiveReport rep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto e = detail::enumerate_sample(m, ds.x(i), ds.labels[i], cfg, schedule);
    double j = 0.0, cost = 0.0, raw = 0.0, cum = 0.0, cum_raw = 0.0;
    for (std::size_t k = 0; k < m.stages(); ++k) {
      cum += schedule[k];
      cum_raw += m.raw_costs[k];
      j += e.selection[k] * e.stage_value[k];
      cost += e.selection[k] * cum;
      raw += e.selection[k] * cum_raw;
    }
    rep.per_sample_reward.push_back(j);
    rep.selection.push_back(e.selection);
    rep.objective += j;
    rep.expected_cost += cost;
    rep.expected_raw_flops += raw;
  }
  const double n = static_cast<double>(ds.size());
  rep.objective /= n;
  rep.expected_cost /= n;
  rep.expected_raw_flops /= n;
  return rep;
}

// Analytic gradient of exact_objective, chaining net_backward through the
// enumeration: policy heads -> observations -> classifier logits.
inline CascadeGradient exact_gradient(const CascadeModel& m, const Dataset& ds,
                                      const RewardConfig& cfg) {
  validate(m);
  validate(ds);
  check_enumeration_guard(m, ds);
  const std::size_t K = m.stages();
  const auto schedule = m.cost_schedule();
  auto grad = CascadeGradient::zeros_like(m);
  const double inv_n = 1.0 / static_cast<double>(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t y = ds.labels[i];
    const auto e = detail::enumerate_sample(m, ds.x(i), y, cfg, schedule);
    const auto& pi = e.stop_probs;
    std::vector<std::vector<double>> dclf(K, std::vector<double>(m.num_classes, 0.0));
    for (std::size_t t = 0; t + 1 < K; ++t) {
      // dJ/dpi_t = sum_k V_k dPi_k/dpi_t
      double d_pi = 0.0;
      for (std::size_t k = t; k < K; ++k) {
        double prod = k == t ? 1.0 : -pi[k];
        for (std::size_t u = 0; u < k; ++u)
          if (u != t) prod *= 1.0 - pi[u];
        d_pi += e.stage_value[k] * prod;
      }
      // pi_t = head[0]; d head[0] / dz = head[0] (e_0 - head)
      const auto& head = e.policies[t].head;
      auto dz = log_prob_grad(head, 0);
      for (double& v : dz) v *= d_pi * head[0];
      const auto ds_t = backward_accumulate(m.policies[t], e.policies[t].cache, dz, grad.policies[t], inv_n);
      dclf[t] = softmax_vjp(e.classifiers[t].probs, ds_t);
    }
    for (std::size_t k = 0; k < K; ++k) {
      const auto& probs = e.classifiers[k].probs;
      std::vector<double> dv(m.num_classes, 0.0);
      if (cfg.loss == RewardLoss::ZeroOne) {
        std::vector<double> r(m.num_classes);
        for (std::size_t yhat = 0; yhat < m.num_classes; ++yhat) {
          r[yhat] = reward(k, probs, yhat, y, cfg, schedule);
        }
        dv = softmax_vjp(probs, r);
      } else if (probs[y] > kProbFloor) {
        dv = log_prob_grad(probs, y);
      }
      for (std::size_t c = 0; c < m.num_classes; ++c) dclf[k][c] += inv_n * e.selection[k] * dv[c];
      backward_accumulate(m.classifiers[k], e.classifiers[k].cache, dclf[k], grad.classifiers[k]);
    }
  }
  return grad;
}

// Central differences of exact_objective over every parameter, in
// CascadeGradient::flatten order.
inline std::vector<double> exact_gradient_fd(const CascadeModel& m, const Dataset& ds,
                                             const RewardConfig& cfg, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) {
    throw ConfigError("exact_gradient_fd: epsilon must lie in [1e-7, 1e-4]");
  }
  check_enumeration_guard(m, ds);
  CascadeModel work = m;
  auto ptrs = parameter_pointers(work);
  std::vector<double> g(ptrs.size());
  for (std::size_t p = 0; p < ptrs.size(); ++p) {
    const double orig = *ptrs[p];
    const double up = orig + eps;
    const double down = orig - eps;
    *ptrs[p] = up;
    const double j_up = exact_objective(work, ds, cfg).objective;
    *ptrs[p] = down;
    const double j_down = exact_objective(work, ds, cfg).objective;
    *ptrs[p] = orig;
    g[p] = (j_up - j_down) / (up - down);
  }
  return g;
}

// Relative error with the denominator floored at `floor`, so components
// whose true value is near zero are judged on absolute error.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-3) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

enum class BaselineKind { Zero, Constant, Minibatch };

struct BiasCheckOptions {
  std::size_t rollouts = 200'000;
  std::uint64_t seed = 0;
  BaselineKind baseline = BaselineKind::Zero;
  double constant_baseline = 0.0;
  std::size_t batch_size = 128;
  double eps = 1e-6;
};

struct BiasCheckReport {
  std::vector<double> mean;       // empirical mean of the estimator
  std::vector<double> variance;   // per-component sample variance
  std::vector<double> oracle;     // FD gradient of the exact objective
  std::vector<double> z;          // NaN for excluded components
  std::vector<std::size_t> excluded;
  double max_abs_z = 0.0;
  double oracle_resolution = 0.0;
  std::size_t rollouts = 0;
};

namespace detail {

// Streams per-rollout estimator vectors into mean/variance accumulators
// (Welford).
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  void add(std::span<const double> v) {
    ++n_;
    const double inv = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = v[i] - mean_[i];
      mean_[i] += d * inv;
      m2_[i] += d * (v[i] - mean_[i]);
    }
  }

  std::size_t count() const { return n_; }
  const std::vector<double>& mean() const { return mean_; }
  std::vector<double> variance() const {
    std::vector<double> v(m2_.size(), 0.0);
    if (n_ > 1)
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / static_cast<double>(n_ - 1);
    return v;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> mean_, m2_;
};

struct FlatSample {
  std::vector<double> score;
  std::vector<double> pathwise;
  double reward = 0.0;
};

inline FlatSample flat_sample(const CascadeModel& m, const Dataset& ds, const RewardConfig& cfg,
                              std::size_t index, std::uint64_t seed) {
  RolloutOptions opt;
  opt.reward = cfg;
  Rng rng(mix_seed(seed, index));
  const std::size_t i = index % ds.size();
  const Rollout r = rollout(m, ds.x(i), ds.labels[i], rng, opt);
  FlatSample s;
  s.reward = r.reward;
  s.score = score_gradient(m, r).flatten();
  if (cfg.loss == RewardLoss::Log) {
    auto pw = CascadeGradient::zeros_like(m);
    accumulate_reward_pathwise(m, r, cfg.loss, 1.0, pw);
    s.pathwise = pw.flatten();
  }
  return s;
}

}  // namespace detail

// Rolls out sample (i mod N) for i < rollouts and compares the empirical
// mean of the REINFORCE estimate with the FD gradient of the exact
// objective: z = (mean - oracle) / standard error. Components whose
// estimator never varies are excluded.
inline BiasCheckReport estimator_bias_check(const CascadeModel& m, const Dataset& ds,
                                            const RewardConfig& cfg, const BiasCheckOptions& opt) {
  if (opt.rollouts < 10'000) throw ConfigError("estimator_bias_check: need at least 1e4 rollouts");
  if (opt.batch_size == 0) throw ConfigError("estimator_bias_check: batch_size must be positive");
  BiasCheckReport rep;
  rep.oracle = exact_gradient_fd(m, ds, cfg, opt.eps);
  const std::size_t P = rep.oracle.size();
  std::size_t C = 0;
  for (const auto& c : m.classifiers) C += c.parameter_count();
  detail::MomentAccumulator acc(P);
  std::vector<double> v(P);
  for (std::size_t start = 0; start < opt.rollouts; start += opt.batch_size) {
    const std::size_t end = std::min(opt.rollouts, start + opt.batch_size);
    std::vector<detail::FlatSample> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(detail::flat_sample(m, ds, cfg, i, opt.seed));
    // Flat order puts classifier parameters first; the minibatch baseline
    // is formed block by block as in training.
    std::vector<double> bc(batch.size(), 0.0), bp(batch.size(), 0.0);
    if (opt.baseline == BaselineKind::Constant) {
      std::fill(bc.begin(), bc.end(), opt.constant_baseline);
      std::fill(bp.begin(), bp.end(), opt.constant_baseline);
    } else if (opt.baseline == BaselineKind::Minibatch) {
      std::vector<double> returns, cn, pn;
      for (const auto& s : batch) {
        returns.push_back(s.reward);
        double c = 0.0, q = 0.0;
        for (std::size_t k = 0; k < P; ++k) (k < C ? c : q) += s.score[k] * s.score[k];
        cn.push_back(c);
        pn.push_back(q);
      }
      bc = leave_one_out_baselines(returns, cn);
      bp = leave_one_out_baselines(returns, pn);
    }
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto& s = batch[j];
      for (std::size_t p = 0; p < P; ++p) {
        const double b = p < C ? bc[j] : bp[j];
        v[p] = s.score[p] * (s.reward - b) + (s.pathwise.empty() ? 0.0 : s.pathwise[p]);
      }
      acc.add(v);
    }
  }
  rep.rollouts = acc.count();
  rep.mean = acc.mean();
  rep.variance = acc.variance();
  rep.z.assign(P, std::nan(""));
  // roundoff floor of the central difference
  const double j = exact_objective(m, ds, cfg).objective;
  rep.oracle_resolution = std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(j)) / opt.eps;
  for (std::size_t p = 0; p < P; ++p) {
    const double se = std::sqrt(rep.variance[p] / static_cast<double>(rep.rollouts));
    if (!(se > 0.0)) {
      rep.excluded.push_back(p);
      continue;
    }
    rep.z[p] = (rep.mean[p] - rep.oracle[p]) / std::hypot(se, rep.oracle_resolution);
    rep.max_abs_z = std::max(rep.max_abs_z, std::abs(rep.z[p]));
  }
  return rep;
}

struct PairedBaselineReport {
  std::vector<double> z;
  double max_abs_z = 0.0;
  std::vector<std::size_t> excluded;
};

// Paired comparison of the estimator with b = 0 and with a constant b on
// the same rollouts. The per-rollout difference is b * score, whose mean
// should vanish.
inline PairedBaselineReport paired_baseline_check(const CascadeModel& m, const Dataset& ds,
                                                  const RewardConfig& cfg, std::size_t rollouts,
                                                  std::uint64_t seed, double b) {
  if (rollouts < 2) throw ConfigError("paired_baseline_check: need at least 2 rollouts");
  const std::size_t P = m.parameter_count();
  detail::MomentAccumulator acc(P);
  std::vector<double> diff(P);
  for (std::size_t i = 0; i < rollouts; ++i) {
    const auto s = detail::flat_sample(m, ds, cfg, i, seed);
    for (std::size_t p = 0; p < P; ++p) diff[p] = b * s.score[p];
    acc.add(diff);
  }
  PairedBaselineReport rep;
  const auto var = acc.variance();
  rep.z.assign(P, std::nan(""));
  for (std::size_t p = 0; p < P; ++p) {
    const double se = std::sqrt(var[p] / static_cast<double>(rollouts));
    if (!(se > 0.0)) {
      rep.excluded.push_back(p);
      continue;
    }
    rep.z[p] = acc.mean()[p] / se;
    rep.max_abs_z = std::max(rep.max_abs_z, std::abs(rep.z[p]));
  }
  return rep;
}

// Sums the probability of every stop/continue sequence over the first K-1
// stages (2^(K-1) paths), grouped by the first stop.
inline std::vector<double> path_enumeration_check(std::span<const double> stop_probs) {
  const std::size_t K = stop_probs.size();
  if (K == 0 || K > 20) throw ConfigError("path_enumeration_check: need 1 <= K <= 20");
  for (double p : stop_probs)
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("path_enumeration_check: probability outside [0,1]");
  if (stop_probs.back() != 1.0) throw ContractError("path_enumeration_check: terminal stop must be 1");
  std::vector<double> pi(K, 0.0);
  const std::uint64_t paths = 1ULL << (K - 1);
  for (std::uint64_t bits = 0; bits < paths; ++bits) {
    // bit t set: the policy at stage t says stop
    std::size_t first_stop = K - 1;
    for (std::size_t t = 0; t + 1 < K; ++t) {
      if (bits >> t & 1ULL) {
        first_stop = t;
        break;
      }
    }
    double p = 1.0;
    for (std::size_t t = 0; t + 1 < K; ++t) p *= (bits >> t & 1ULL) ? stop_probs[t] : 1.0 - stop_probs[t];
    pi[first_stop] += p;
  }
  return pi;
}

// K = 3 classifiers 4 -> 8 -> 2 with 8-wide policies, 20 two-tier samples
// and a 1:4:16 raw cost schedule.
struct TinyInstance {
  CascadeModel model;
  Dataset data;
};

inline TinyInstance canonical_tiny_instance(std::uint64_t seed = 11) {
  TierSpec spec;
  spec.feature_dim = 4;
  spec.num_classes = 2;
  spec.separation = {2.0, 0.8};
  spec.noise = {0.0, 0.1};
  spec.clusters_per_class = {1, 2};
  spec.samples = {10, 10};
  spec.seed = mix_seed(seed, 1);
  TinyInstance inst;
  inst.data = gen_tiered(spec);
  CascadeModel m;
  m.num_classes = 2;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t hidden[] = {8};
    m.classifiers.push_back(make_classifier(4, hidden, 2, mix_seed(seed, 10 + k)));
  }
  for (std::size_t k = 0; k < 2; ++k) m.policies.push_back(make_policy(2, 8, mix_seed(seed, 20 + k)));
  m.raw_costs = {1.0, 4.0, 16.0};
  validate(m);
  inst.model = std::move(m);
  return inst;
}

}  // namespace cascade
