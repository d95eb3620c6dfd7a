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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/rng.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

// Probabilities are floored here before taking a log, so rewards and
// losses stay finite.
inline constexpr double kProbFloor = 1e-12;

enum class Activation { ReLU, Identity };

inline std::string_view to_string(Activation a) {
  return a == Activation::ReLU ? "relu" : "identity";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

// y = activation(x W + b), W stored in_dim x out_dim.
struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Tensor2D weights;
  std::vector<double> bias;
  Activation activation = Activation::Identity;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act)
      : in_dim(in), out_dim(out), weights(in, out), bias(out, 0.0),
        activation(act) {}

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

inline double apply_activation(Activation a, double v) {
  return a == Activation::ReLU ? std::max(v, 0.0) : v;
}

// Pre-activation for one row, written into `out` (size out_dim).
inline void dense_affine(std::span<const double> x, const DenseLayer& layer,
                         std::span<double> out) {
  for (std::size_t j = 0; j < layer.out_dim; ++j) out[j] = layer.bias[j];
  for (std::size_t i = 0; i < layer.in_dim; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* w = layer.weights.data.data() + i * layer.out_dim;
    for (std::size_t j = 0; j < layer.out_dim; ++j) out[j] += xi * w[j];
  }
}

inline Tensor2D dense_forward(const Tensor2D& x, const DenseLayer& layer) {
  if (x.cols != layer.in_dim) {
    throw DimensionError("dense_forward: input has " + std::to_string(x.cols) +
                         " columns, layer expects " +
                         std::to_string(layer.in_dim));
  }
  Tensor2D y(x.rows, layer.out_dim);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto out = y.row(r);
    dense_affine(x.row(r), layer, out);
    for (double& v : out) v = apply_activation(layer.activation, v);
  }
  return y;
}

// Max-subtracted softmax, renormalized so the entries sum to 1 to within
// rounding.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(probs.size()) +
                     " classes");
  }
  return -floored_log(probs[label]);
}

// Feed-forward stack of dense layers. `version` increases on every
// parameter update so forward caches can detect that they are stale.
struct Network {
  std::vector<DenseLayer> layers;
  std::uint64_t version = 0;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weights.all_finite()) return false;
      for (double b : l.bias)
        if (!std::isfinite(b)) return false;
    }
    return true;
  }

  void touch() { ++version; }
};

// Per-input forward cost. A dense layer costs one multiply and one add per
// weight plus one add per bias; activations and softmax count zero.
inline std::uint64_t flops_of(std::span<const DenseLayer> layers) {
  std::uint64_t total = 0;
  for (const auto& l : layers) {
    total += 2ULL * l.in_dim * l.out_dim + l.out_dim;
  }
  return total;
}

inline std::uint64_t flops_of(const Network& net) { return flops_of(net.layers); }

// Everything net_backward needs from a forward pass.
struct ForwardCache {
  const Network* net = nullptr;
  std::uint64_t version = 0;
  std::vector<std::vector<double>> inputs;  // input to each layer
  std::vector<std::vector<double>> pre;     // pre-activation of each layer
  std::vector<double> logits;
};

struct ForwardResult {
  std::vector<double> probs;
  ForwardCache cache;
};

inline ForwardCache logits_forward(const Network& net, std::span<const double> x) {
  if (net.layers.empty()) throw DimensionError("forward: network has no layers");
  if (x.size() != net.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(x.size()) +
                         " entries, network expects " +
                         std::to_string(net.input_dim()));
  }
  ForwardCache cache;
  cache.net = &net;
  cache.version = net.version;
  cache.inputs.reserve(net.layers.size());
  cache.pre.reserve(net.layers.size());
  std::vector<double> a(x.begin(), x.end());
  for (const auto& layer : net.layers) {
    std::vector<double> z(layer.out_dim);
    dense_affine(a, layer, z);
    cache.inputs.push_back(std::move(a));
    a.resize(layer.out_dim);
    for (std::size_t j = 0; j < z.size(); ++j) a[j] = apply_activation(layer.activation, z[j]);
    cache.pre.push_back(std::move(z));
  }
  cache.logits = std::move(a);
  return cache;
}

inline ForwardResult net_forward(const Network& net, std::span<const double> x) {
  ForwardResult r;
  r.cache = logits_forward(net, x);
  r.probs = softmax(r.cache.logits);
  return r;
}

// Gradient of a scalar with respect to one layer's parameters.
struct LayerGrad {
  Tensor2D weights;
  std::vector<double> bias;

  friend bool operator==(const LayerGrad&, const LayerGrad&) = default;
};

// Gradients shaped like a Network's parameters.
struct GradientSet {
  std::vector<LayerGrad> layers;

  static GradientSet zeros_like(const Network& net) {
    GradientSet g;
    g.layers.reserve(net.layers.size());
    for (const auto& l : net.layers) {
      g.layers.push_back({Tensor2D(l.in_dim, l.out_dim), std::vector<double>(l.out_dim, 0.0)});
    }
    return g;
  }

  void check_congruent(const GradientSet& other) const {
    bool ok = layers.size() == other.layers.size();
    for (std::size_t i = 0; ok && i < layers.size(); ++i) {
      ok = layers[i].weights.rows == other.layers[i].weights.rows &&
           layers[i].weights.cols == other.layers[i].weights.cols &&
           layers[i].bias.size() == other.layers[i].bias.size();
    }
    if (!ok) throw DimensionError("GradientSet: shapes are not congruent");
  }

  GradientSet& add_scaled(const GradientSet& other, double scale) {
    check_congruent(other);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& w = layers[i].weights.data;
      const auto& ow = other.layers[i].weights.data;
      for (std::size_t j = 0; j < w.size(); ++j) w[j] += scale * ow[j];
      auto& b = layers[i].bias;
      const auto& ob = other.layers[i].bias;
      for (std::size_t j = 0; j < b.size(); ++j) b[j] += scale * ob[j];
    }
    return *this;
  }

  GradientSet& scale(double s) {
    for (auto& l : layers) {
      for (double& v : l.weights.data) v *= s;
      for (double& v : l.bias) v *= s;
    }
    return *this;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& l : layers) {
      for (double v : l.weights.data) s += v * v;
      for (double v : l.bias) s += v * v;
    }
    return s;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weights.all_finite()) return false;
      for (double v : l.bias)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool is_zero() const {
    for (const auto& l : layers) {
      for (double v : l.weights.data)
        if (v != 0.0) return false;
      for (double v : l.bias)
        if (v != 0.0) return false;
    }
    return true;
  }

  // Weights (row-major) then bias, layer by layer.
  void append_flat(std::vector<double>& out) const {
    for (const auto& l : layers) {
      out.insert(out.end(), l.weights.data.begin(), l.weights.data.end());
      out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
  }

  friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

struct BackwardResult {
  GradientSet grads;
  std::vector<double> input_grad;
};

inline void check_cache(const Network& net, const ForwardCache& cache) {
  if (cache.net != &net || cache.version != net.version ||
      cache.inputs.size() != net.layers.size()) {
    throw ContractError("net_backward: forward cache does not belong to the "
                        "current parameters of this network");
  }
}

// Backpropagates dL/dlogits through the cached forward pass, accumulating
// parameter gradients into `grads` (which must be congruent with `net`)
// and returning dL/dinput.
inline std::vector<double> backward_accumulate(const Network& net,
                                               const ForwardCache& cache,
                                               std::span<const double> dlogits,
                                               GradientSet& grads,
                                               double scale = 1.0) {
  check_cache(net, cache);
  if (dlogits.size() != net.output_dim()) {
    throw DimensionError("net_backward: dlogits has " + std::to_string(dlogits.size()) +
                         " entries, network has " + std::to_string(net.output_dim()) +
                         " outputs");
  }
  std::vector<double> delta(dlogits.begin(), dlogits.end());
  for (double& d : delta) d *= scale;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    if (layer.activation == Activation::ReLU) {
      for (std::size_t j = 0; j < delta.size(); ++j)
        if (cache.pre[li][j] <= 0.0) delta[j] = 0.0;
    }
    LayerGrad& g = grads.layers[li];
    const auto& in = cache.inputs[li];
    std::vector<double> dinput(layer.in_dim, 0.0);
    for (std::size_t i = 0; i < layer.in_dim; ++i) {
      const double xi = in[i];
      double* gw = g.weights.data.data() + i * layer.out_dim;
      const double* w = layer.weights.data.data() + i * layer.out_dim;
      double acc = 0.0;
      for (std::size_t j = 0; j < layer.out_dim; ++j) {
        gw[j] += xi * delta[j];
        acc += w[j] * delta[j];
      }
      dinput[i] = acc;
    }
    for (std::size_t j = 0; j < layer.out_dim; ++j) g.bias[j] += delta[j];
    delta = std::move(dinput);
  }
  return delta;
}

inline BackwardResult net_backward_full(const Network& net, const ForwardCache& cache,
                                        std::span<const double> dlogits) {
  BackwardResult r{GradientSet::zeros_like(net), {}};
  r.input_grad = backward_accumulate(net, cache, dlogits, r.grads);
  return r;
}

inline GradientSet net_backward(const Network& net, const ForwardCache& cache,
                                std::span<const double> dlogits) {
  return net_backward_full(net, cache, dlogits).grads;
}

// Vector-Jacobian product of softmax: given p = softmax(z) and dL/dp,
// returns dL/dz.
inline std::vector<double> softmax_vjp(std::span<const double> probs,
                                       std::span<const double> dprobs) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * dprobs[i];
  std::vector<double> dz(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) dz[i] = probs[i] * (dprobs[i] - dot);
  return dz;
}

// d log softmax(z)[index] / dz = e_index - p.
inline std::vector<double> log_prob_grad(std::span<const double> probs, std::size_t index) {
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = -probs[i];
  g[index] += 1.0;
  return g;
}

struct MomentumState {
  GradientSet velocity;
};

// v <- momentum * v + grads; params <- params - lr * v.
// Callers that want ascent pass negated gradients.
inline void sgd_momentum_step(Network& net, const GradientSet& grads, double lr,
                              double momentum, MomentumState& state) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("sgd_momentum_step: learning rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("sgd_momentum_step: momentum must lie in [0, 1)");
  }
  if (!grads.all_finite()) {
    throw NumericError("sgd_momentum_step: non-finite gradient, update rejected");
  }
  if (state.velocity.layers.empty()) state.velocity = GradientSet::zeros_like(net);
  state.velocity.check_congruent(grads);
  state.velocity.scale(momentum).add_scaled(grads, 1.0);
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& w = net.layers[li].weights.data;
    const auto& vw = state.velocity.layers[li].weights.data;
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * vw[j];
    auto& b = net.layers[li].bias;
    const auto& vb = state.velocity.layers[li].bias;
    for (std::size_t j = 0; j < b.size(); ++j) b[j] -= lr * vb[j];
  }
  net.touch();
}

// Layer widths d0 -> d1 -> ... -> dn with one activation per layer.
// Weights are U(-sqrt(6/fan_in), +sqrt(6/fan_in)) (He-uniform, std
// sqrt(2/fan_in)) drawn from Rng(seed) in layer order, row-major; biases
// start at zero.
inline Network init_params(std::span<const std::size_t> dims,
                           std::span<const Activation> activations,
                           std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("init_params: need at least input and output widths");
  if (activations.size() != dims.size() - 1) {
    throw ConfigError("init_params: expected " + std::to_string(dims.size() - 1) +
                      " activations, got " + std::to_string(activations.size()));
  }
  for (std::size_t d : dims)
    if (d == 0) throw ConfigError("init_params: layer widths must be positive");
  Rng rng(seed);
  Network net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer(dims[l], dims[l + 1], activations[l]);
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l]));
    for (double& w : layer.weights.data) w = rng.uniform(-limit, limit);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// input -> hidden... -> num_classes, ReLU on hidden layers, Identity head.
inline Network make_classifier(std::size_t input_dim, std::span<const std::size_t> hidden,
                               std::size_t num_classes, std::uint64_t seed) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(num_classes);
  std::vector<Activation> acts(dims.size() - 1, Activation::ReLU);
  acts.back() = Activation::Identity;
  return init_params(dims, acts, seed);
}

// Stopping policy: num_classes -> H -> H -> 2 with a 2-way softmax head;
// entry 0 of the head is the stop probability.
inline Network make_policy(std::size_t num_classes, std::size_t hidden, std::uint64_t seed) {
  const std::size_t dims[] = {num_classes, hidden, hidden, 2};
  const Activation acts[] = {Activation::ReLU, Activation::ReLU, Activation::Identity};
  return init_params(dims, acts, seed);
}

}  // namespace cascade
