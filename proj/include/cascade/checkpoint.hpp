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

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cascade/error.hpp"
#include "cascade/io.hpp"
#include "cascade/model.hpp"
#include "cascade/nn.hpp"

namespace cascade {

// Networks and cascades are stored as JSON. Doubles are written in their
// shortest round-trip form, so save followed by load reproduces every
// parameter bit for bit.

inline nlohmann::json to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"in", l.in_dim},
                      {"out", l.out_dim},
                      {"activation", std::string(to_string(l.activation))},
                      {"weights", l.weights.data},
                      {"bias", l.bias}});
  }
  return {{"format", "cascade-net"}, {"version", 1}, {"layers", layers}};
}

inline Network network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "cascade-net" || j.at("version") != 1) {
      throw FormatError("not a cascade-net v1 document");
    }
    Network net;
    for (const auto& jl : j.at("layers")) {
      DenseLayer l(jl.at("in").get<std::size_t>(), jl.at("out").get<std::size_t>(),
                   parse_activation(jl.at("activation").get<std::string>()));
      auto w = jl.at("weights").get<std::vector<double>>();
      auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != l.in_dim * l.out_dim || b.size() != l.out_dim) {
        throw FormatError("cascade-net: parameter count does not match layer dims");
      }
      if (!net.layers.empty() && net.layers.back().out_dim != l.in_dim) {
        throw FormatError("cascade-net: consecutive layer dims do not chain");
      }
      l.weights.data = std::move(w);
      l.bias = std::move(b);
      net.layers.push_back(std::move(l));
    }
    if (net.layers.empty()) throw FormatError("cascade-net: no layers");
    if (!net.all_finite()) throw FormatError("cascade-net: non-finite parameter");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cascade-net: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("cascade-net: ") + e.what());
  }
}

inline nlohmann::json to_json(const CascadeModel& m, const std::string& config_digest = "") {
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : m.classifiers) cls.push_back(to_json(c));
  nlohmann::json pol = nlohmann::json::array();
  for (const auto& p : m.policies) pol.push_back(to_json(p));
  return {{"format", "cascade-checkpoint"},
          {"version", 1},
          {"num_classes", m.num_classes},
          {"classifiers_pretrained", m.classifiers_pretrained},
          {"raw_costs", m.raw_costs},
          {"config_digest", config_digest},
          {"classifiers", cls},
          {"policies", pol}};
}

inline CascadeModel cascade_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "cascade-checkpoint" || j.at("version") != 1) {
      throw FormatError("not a cascade-checkpoint v1 document");
    }
    CascadeModel m;
    m.num_classes = j.at("num_classes");
    m.classifiers_pretrained = j.at("classifiers_pretrained");
    m.raw_costs = j.at("raw_costs").get<std::vector<double>>();
    for (const auto& c : j.at("classifiers")) m.classifiers.push_back(network_from_json(c));
    for (const auto& p : j.at("policies")) m.policies.push_back(network_from_json(p));
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cascade-checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("cascade-checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("cascade-checkpoint: ") + e.what());
  }
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  write_text_file(path, to_json(net).dump(1) + "\n");
}

inline Network load_network(const std::filesystem::path& path) {
  try {
    return network_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_cascade(const CascadeModel& m, const std::filesystem::path& path,
                         const std::string& config_digest = "") {
  write_text_file(path, to_json(m, config_digest).dump(1) + "\n");
}

inline CascadeModel load_cascade(const std::filesystem::path& path) {
  try {
    return cascade_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cascade
