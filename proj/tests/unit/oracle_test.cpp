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

#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "cascade/oracle.hpp"

namespace cascade {
namespace {

// Constant-output network: zero last-layer weights, logits = bias.
void make_constant(Network& net, std::vector<double> bias) {
  auto& last = net.layers.back();
  std::fill(last.weights.data.begin(), last.weights.data.end(), 0.0);
  last.bias = std::move(bias);
  net.touch();
}

CascadeModel manual_cascade(std::size_t K, std::size_t classes, std::vector<double> raw) {
  CascadeModel m;
  m.num_classes = classes;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t hidden[] = {3};
    m.classifiers.push_back(make_classifier(2, hidden, classes, 100 + k));
  }
  for (std::size_t k = 0; k + 1 < K; ++k) m.policies.push_back(make_policy(classes, 4, 200 + k));
  m.raw_costs = std::move(raw);
  validate(m);
  return m;
}

Dataset small_data(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.num_classes = classes;
  d.features = Tensor2D(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : d.features.row(i)) v = rng.normal();
    d.labels.push_back(i % classes);
  }
  return d;
}

TEST(ExactObjective, SingleStageConfidentAndCorrectIsZero) {
  auto m = manual_cascade(1, 3, {1.0});
  make_constant(m.classifiers[0], {60.0, 0.0, 0.0});
  Dataset d = small_data(5, 3, 1);
  std::fill(d.labels.begin(), d.labels.end(), 0);
  EXPECT_NEAR(exact_objective(m, d, {0.0}).objective, 0.0, 1e-20);
}

TEST(ExactObjective, SingleStageUniform) {
  for (std::size_t classes : {2u, 3u, 7u}) {
    auto m = manual_cascade(1, classes, {1.0});
    make_constant(m.classifiers[0], std::vector<double>(classes, 0.0));
    const auto d = small_data(6, classes, 2);
    const double expect = -(static_cast<double>(classes) - 1.0) / static_cast<double>(classes);
    EXPECT_NEAR(exact_objective(m, d, {0.0}).objective, expect, 1e-14);
    EXPECT_NEAR(exact_objective(m, d, {0.3}).objective, expect - 0.3, 1e-14);
  }
}

TEST(ExactObjective, HandEnumeratedTwoStages) {
  auto m = manual_cascade(2, 2, {1.0, 4.0});
  make_constant(m.classifiers[0], {std::log(3.0), 0.0});   // C1 = (0.75, 0.25)
  make_constant(m.classifiers[1], {std::log(9.0), 0.0});   // C2 = (0.9, 0.1)
  make_constant(m.policies[0], {0.5 * std::log(0.4 / 0.6), -0.5 * std::log(0.4 / 0.6)});  // pi1 = 0.4
  Dataset d = small_data(2, 2, 3);
  d.labels = {0, 1};
  const double alpha = 0.2;
  // stop at 1 costs 0.25, stop at 2 costs 1.25 (inclusive)
  const double j_y0 = 0.4 * (-0.25 - alpha * 0.25) + 0.6 * (-0.1 - alpha * 1.25);
  const double j_y1 = 0.4 * (-0.75 - alpha * 0.25) + 0.6 * (-0.9 - alpha * 1.25);
  const auto rep = exact_objective(m, d, {alpha});
  EXPECT_NEAR(rep.per_sample_reward[0], j_y0, 1e-14);
  EXPECT_NEAR(rep.per_sample_reward[1], j_y1, 1e-14);
  EXPECT_NEAR(rep.objective, 0.5 * (j_y0 + j_y1), 1e-14);
  EXPECT_NEAR(rep.expected_cost, 0.4 * 0.25 + 0.6 * 1.25, 1e-14);
  EXPECT_NEAR(rep.expected_raw_flops, 0.4 * 1.0 + 0.6 * 5.0, 1e-13);
  // exclusive: stop at 1 is free, stop at 2 pays F1
  const double ex_y0 = 0.4 * -0.25 + 0.6 * (-0.1 - alpha * 0.25);
  const auto rep_ex = exact_objective(m, d, {alpha, RewardLoss::ZeroOne, CostConvention::Exclusive});
  EXPECT_NEAR(rep_ex.per_sample_reward[0], ex_y0, 1e-14);
}

TEST(ExactObjective, InvariantToDatasetOrder) {
  const auto inst = canonical_tiny_instance();
  std::vector<std::size_t> idx(inst.data.size());
  std::iota(idx.rbegin(), idx.rend(), 0);
  const auto reversed = inst.data.subset(idx);
  EXPECT_NEAR(exact_objective(inst.model, inst.data, {0.05}).objective,
              exact_objective(inst.model, reversed, {0.05}).objective, 1e-14);
}

TEST(EnumerationGuard, RejectsTooManyTerms) {
  auto m = manual_cascade(2, 10, {1.0, 2.0});
  const auto big = small_data(50'001, 10, 4);  // 2 * 10 * 50001 > 1e6
  EXPECT_THROW(check_enumeration_guard(m, big), SizeError);
  EXPECT_THROW(exact_objective(m, big, {0.0}), SizeError);
  const auto ok = small_data(50'000, 10, 4);
  EXPECT_NO_THROW(check_enumeration_guard(m, ok));
}

TEST(ExactGradientFd, EpsilonRange) {
  const auto inst = canonical_tiny_instance();
  EXPECT_THROW(exact_gradient_fd(inst.model, inst.data, {0.05}, 1e-3), ConfigError);
  EXPECT_THROW(exact_gradient_fd(inst.model, inst.data, {0.05}, 1e-8), ConfigError);
  EXPECT_THROW(exact_gradient_fd(inst.model, inst.data, {0.05}, 1.0), ConfigError);
}

TEST(ExactGradient, AnalyticMatchesFiniteDifferences) {
  const auto inst = canonical_tiny_instance();
  for (auto loss : {RewardLoss::ZeroOne, RewardLoss::Log}) {
    const RewardConfig cfg{0.05, loss};
    const auto analytic = exact_gradient(inst.model, inst.data, cfg).flatten();
    const auto fd = exact_gradient_fd(inst.model, inst.data, cfg, 1e-6);
    EXPECT_LT(max_relative_error(analytic, fd), 1e-5);
  }
}

TEST(ExactGradient, LastLayerBiasShiftIsFlat) {
  // adding the same constant to every logit bias leaves every softmax unchanged
  const auto inst = canonical_tiny_instance();
  const auto g = exact_gradient(inst.model, inst.data, {0.05});
  for (const auto* set : {&g.classifiers, &g.policies}) {
    for (const auto& net : *set) {
      const auto& b = net.layers.back().bias;
      EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), 0.0, 1e-14);
    }
  }
}

TEST(ExactGradient, FiniteDifferenceErrorIsSecondOrder) {
  const auto inst = canonical_tiny_instance();
  const RewardConfig cfg{0.05};
  const auto analytic = exact_gradient(inst.model, inst.data, cfg).flatten();
  const auto coarse = exact_gradient_fd(inst.model, inst.data, cfg, 1e-4);
  const auto fine = exact_gradient_fd(inst.model, inst.data, cfg, 5e-5);
  double e_coarse = 0.0, e_fine = 0.0;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    e_coarse = std::max(e_coarse, std::abs(coarse[p] - analytic[p]));
    e_fine = std::max(e_fine, std::abs(fine[p] - analytic[p]));
  }
  // halving eps should cut the truncation error roughly fourfold
  EXPECT_LT(e_fine, 0.4 * e_coarse);
}

TEST(ExactGradient, StepAlongGradientIncreasesObjective) {
  const auto inst = canonical_tiny_instance();
  const RewardConfig cfg{0.05};
  const auto g = exact_gradient(inst.model, inst.data, cfg);
  auto moved = inst.model;
  auto step = g;
  step.scale(-1e-3);
  for (std::size_t k = 0; k < moved.classifiers.size(); ++k) {
    MomentumState st;
    sgd_momentum_step(moved.classifiers[k], step.classifiers[k], 1.0, 0.0, st);
  }
  for (std::size_t t = 0; t < moved.policies.size(); ++t) {
    MomentumState st;
    sgd_momentum_step(moved.policies[t], step.policies[t], 1.0, 0.0, st);
  }
  EXPECT_GT(exact_objective(moved, inst.data, cfg).objective,
            exact_objective(inst.model, inst.data, cfg).objective);
}

TEST(BiasCheck, UnbiasedOnCanonicalInstance) {
  const auto inst = canonical_tiny_instance();
  BiasCheckOptions o;
  o.rollouts = 200'000;
  o.seed = 3;
  const auto rep = estimator_bias_check(inst.model, inst.data, {0.05}, o);
  EXPECT_LT(rep.max_abs_z, 4.0);
  EXPECT_EQ(rep.rollouts, 200'000u);
}

TEST(BiasCheck, SaturatedPolicyComponentsAreExcluded) {
  auto inst = canonical_tiny_instance();
  make_constant(inst.model.policies[0], {40.0, -40.0});  // always stops at 1
  BiasCheckOptions o;
  o.rollouts = 10'000;
  const auto rep = estimator_bias_check(inst.model, inst.data, {0.05}, o);
  std::size_t excluded_later = 0;
  std::size_t offset = 0;
  for (const auto& c : inst.model.classifiers) offset += c.parameter_count();
  offset += inst.model.policies[0].parameter_count();
  for (auto p : rep.excluded) excluded_later += p >= offset;
  // policy 2 is never reached
  EXPECT_EQ(excluded_later, inst.model.policies[1].parameter_count());
  for (auto p : rep.excluded) EXPECT_TRUE(std::isnan(rep.z[p]));
  EXPECT_LT(rep.max_abs_z, 4.0);
}

TEST(BiasCheck, RejectsTooFewRollouts) {
  const auto inst = canonical_tiny_instance();
  BiasCheckOptions o;
  o.rollouts = 100;
  EXPECT_THROW(estimator_bias_check(inst.model, inst.data, {0.05}, o), ConfigError);
}

TEST(PathEnumeration, HandExamples) {
  const auto a = path_enumeration_check(std::vector<double>{0.2, 0.5, 1.0});
  EXPECT_NEAR(a[0], 0.2, 1e-15);
  EXPECT_NEAR(a[1], 0.4, 1e-15);
  EXPECT_NEAR(a[2], 0.4, 1e-15);
  const auto b = path_enumeration_check(std::vector<double>{0.5, 0.5, 0.5, 1.0});
  EXPECT_EQ(b, (std::vector<double>{0.5, 0.25, 0.125, 0.125}));
  EXPECT_EQ(path_enumeration_check(std::vector<double>{1.0}), std::vector<double>{1.0});
  EXPECT_THROW(path_enumeration_check(std::vector<double>{0.5, 0.5}), ContractError);
}

TEST(PathEnumeration, AgreesWithSelectionDistribution) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + trial % 10);
    for (double& v : p) v = rng.uniform();
    p.back() = 1.0;
    const auto paths = path_enumeration_check(p);
    const auto closed = selection_distribution(p);
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(paths[k], closed[k], 1e-14);
  }
}

}  // namespace
}  // namespace cascade
