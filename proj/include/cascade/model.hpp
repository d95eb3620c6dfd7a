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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/nn.hpp"
#include "cascade/rng.hpp"

namespace cascade {

// Shape of a cascade: one hidden-width list per classifier, in increasing
// order of cost, plus the stopping-policy hidden width.
struct CascadeArchitecture {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> classifier_hidden;
  std::size_t policy_hidden = 64;
};

// K classifiers, K-1 stopping policies (the last stage always stops) and a
// raw per-stage cost F_k. Costs seen by the reward are normalized by the
// largest raw cost.
struct CascadeModel {
  std::vector<Network> classifiers;
  std::vector<Network> policies;
  std::vector<double> raw_costs;
  std::size_t num_classes = 0;
  bool classifiers_pretrained = false;

  std::size_t stages() const { return classifiers.size(); }
  std::size_t input_dim() const {
    return classifiers.empty() ? 0 : classifiers.front().input_dim();
  }

  std::vector<double> cost_schedule() const {
    std::vector<double> f(raw_costs.size());
    const double top = raw_costs.empty() ? 1.0 : raw_costs.back();
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = raw_costs[k] / top;
    return f;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& c : classifiers) n += c.parameter_count();
    for (const auto& p : policies) n += p.parameter_count();
    return n;
  }
};

inline void validate_raw_costs(const std::vector<double>& raw, std::size_t stages) {
  if (raw.size() != stages) {
    throw ConfigError("cost schedule has " + std::to_string(raw.size()) +
                      " entries for " + std::to_string(stages) + " stages");
  }
  for (std::size_t k = 0; k < raw.size(); ++k) {
    if (!(raw[k] > 0.0) || !std::isfinite(raw[k])) {
      throw ConfigError("cost schedule entries must be positive and finite");
    }
    if (k > 0 && !(raw[k] > raw[k - 1])) {
      throw ConfigError("cost schedule must be strictly increasing");
    }
  }
}

inline void validate(const CascadeModel& m) {
  const std::size_t K = m.stages();
  if (K == 0) throw ConfigError("cascade needs at least one classifier");
  if (m.policies.size() != K - 1) {
    throw ConfigError("cascade with " + std::to_string(K) + " classifiers needs " +
                      std::to_string(K - 1) + " policies");
  }
  for (const auto& c : m.classifiers) {
    if (c.output_dim() != m.num_classes) throw DimensionError("classifier output != num_classes");
    if (c.input_dim() != m.input_dim()) throw DimensionError("classifiers disagree on input dim");
    if (c.layers.back().activation != Activation::Identity) {
      throw ConfigError("classifier must end in an identity layer");
    }
  }
  for (const auto& p : m.policies) {
    if (p.input_dim() != m.num_classes || p.output_dim() != 2) {
      throw DimensionError("policy must map num_classes -> 2");
    }
  }
  validate_raw_costs(m.raw_costs, K);
}

// Classifier FLOPs plus, for every stage but the last, the FLOPs of the
// stopping policy evaluated after it.
inline std::vector<double> measured_raw_costs(const CascadeModel& m) {
  std::vector<double> raw(m.stages());
  for (std::size_t k = 0; k < m.stages(); ++k) {
    raw[k] = static_cast<double>(flops_of(m.classifiers[k]));
    if (k < m.policies.size()) raw[k] += static_cast<double>(flops_of(m.policies[k]));
  }
  return raw;
}

// Named raw cost schedules in FLOPs: the five-ResNet CIFAR cascade
// (8/20/32/56/110 layers) and the width-scaled ImageNet32x32 cascade.
inline const std::map<std::string, std::vector<double>>& cost_presets() {
  static const std::map<std::string, std::vector<double>> presets{
      {"cifar-resnet", {14.86e6, 43.17e6, 71.48e6, 128.11e6, 255.51e6}},
      {"imagenet32-wrn", {85.64e6, 192.36e6, 341.68e6, 768.13e6, 1364.97e6}},
  };
  return presets;
}

inline const std::vector<double>& cost_preset(const std::string& name) {
  const auto& p = cost_presets();
  auto it = p.find(name);
  if (it == p.end()) throw ConfigError("unknown cost preset '" + name + "'");
  return it->second;
}

inline void set_raw_costs(CascadeModel& m, std::vector<double> raw) {
  validate_raw_costs(raw, m.stages());
  m.raw_costs = std::move(raw);
}

// Networks are seeded from mix_seed(seed, stream) with classifier k on
// stream k and policy k on stream 1000 + k.
inline CascadeModel build_cascade(const CascadeArchitecture& arch, std::uint64_t seed) {
  if (arch.classifier_hidden.empty()) throw ConfigError("cascade needs at least one classifier");
  if (arch.input_dim == 0 || arch.num_classes < 2) {
    throw ConfigError("cascade needs input_dim > 0 and at least 2 classes");
  }
  if (arch.policy_hidden == 0) throw ConfigError("policy hidden width must be positive");
  CascadeModel m;
  m.num_classes = arch.num_classes;
  const std::size_t K = arch.classifier_hidden.size();
  for (std::size_t k = 0; k < K; ++k) {
    m.classifiers.push_back(make_classifier(arch.input_dim, arch.classifier_hidden[k],
                                            arch.num_classes, mix_seed(seed, k)));
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    m.policies.push_back(make_policy(arch.num_classes, arch.policy_hidden,
                                     mix_seed(seed, 1000 + k)));
  }
  m.raw_costs = measured_raw_costs(m);
  validate(m);
  return m;
}

}  // namespace cascade
