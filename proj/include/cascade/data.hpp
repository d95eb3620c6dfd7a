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

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/rng.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

// Labeled samples. `tiers` is either empty or holds one difficulty tier
// (0-based) per sample.
struct Dataset {
  Tensor2D features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::vector<std::size_t> tiers;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  std::span<const double> x(std::size_t i) const { return features.row(i); }
  bool has_tiers() const { return !tiers.empty(); }

  std::size_t num_tiers() const {
    std::size_t n = 0;
    for (auto t : tiers) n = std::max(n, t + 1);
    return n;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.num_classes = num_classes;
    d.features = Tensor2D(idx.size(), dim());
    d.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto src = x(idx[r]);
      std::copy(src.begin(), src.end(), d.features.row(r).begin());
      d.labels.push_back(labels[idx[r]]);
      if (has_tiers()) d.tiers.push_back(tiers[idx[r]]);
    }
    return d;
  }
};

inline void validate(const Dataset& d) {
  if (d.size() == 0) throw ConfigError("dataset is empty");
  if (d.features.rows != d.size()) throw DimensionError("dataset: feature rows != labels");
  if (d.num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  for (auto y : d.labels)
    if (y >= d.num_classes) throw FormatError("dataset: label " + std::to_string(y) + " >= num_classes");
  if (d.has_tiers() && d.tiers.size() != d.size()) {
    throw ConfigError("dataset: tier tags must cover every sample");
  }
}

// Tiered Gaussian-mixture generator. Tier t draws, for each class,
// clusters_per_class[t] centers from N(0, separation[t]^2 I); a sample is
// its center plus N(0, I) noise. With probability noise[t] the label is
// replaced by a uniformly chosen different class, which caps the Bayes
// accuracy of that tier at 1 - noise[t].
struct TierSpec {
  std::size_t feature_dim = 2;
  std::size_t num_classes = 2;
  std::vector<double> separation;
  std::vector<double> noise;
  std::vector<std::size_t> clusters_per_class;
  std::vector<std::size_t> samples;
  std::uint64_t seed = 0;

  std::size_t num_tiers() const { return separation.size(); }
};

inline void validate(const TierSpec& s) {
  const std::size_t T = s.num_tiers();
  if (T == 0) throw ConfigError("tier spec: need at least one tier");
  if (s.noise.size() != T || s.samples.size() != T) {
    throw ConfigError("tier spec: separation, noise and samples must have one entry per tier");
  }
  if (!s.clusters_per_class.empty() && s.clusters_per_class.size() != T) {
    throw ConfigError("tier spec: clusters_per_class must have one entry per tier");
  }
  if (s.feature_dim == 0 || s.num_classes < 2) {
    throw ConfigError("tier spec: need feature_dim > 0 and num_classes >= 2");
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (!(s.separation[t] > 0.0)) throw ConfigError("tier spec: separation must be positive");
    if (!(s.noise[t] >= 0.0 && s.noise[t] < 0.5)) {
      throw ConfigError("tier spec: noise must lie in [0, 0.5)");
    }
    if (s.samples[t] == 0) throw ConfigError("tier spec: every tier needs samples");
    if (!s.clusters_per_class.empty() && s.clusters_per_class[t] == 0) {
      throw ConfigError("tier spec: clusters_per_class must be positive");
    }
    if (t > 0 && !(s.separation[t] < s.separation[t - 1])) {
      throw ConfigError("tier spec: separation must strictly decrease with tier");
    }
    if (t > 0 && s.noise[t] < s.noise[t - 1]) {
      throw ConfigError("tier spec: noise must not decrease with tier");
    }
  }
}

inline Dataset gen_tiered(const TierSpec& spec) {
  validate(spec);
  const std::size_t d = spec.feature_dim;
  const std::size_t m = spec.num_classes;
  std::size_t n = 0;
  for (auto c : spec.samples) n += c;
  Dataset ds;
  ds.num_classes = m;
  ds.features = Tensor2D(n, d);
  ds.labels.reserve(n);
  ds.tiers.reserve(n);
  std::size_t row = 0;
  for (std::size_t t = 0; t < spec.num_tiers(); ++t) {
    Rng rng(mix_seed(spec.seed, t));
    const std::size_t clusters = spec.clusters_per_class.empty() ? 1 : spec.clusters_per_class[t];
    std::vector<double> centers(m * clusters * d);
    for (double& c : centers) c = spec.separation[t] * rng.normal();
    for (std::size_t i = 0; i < spec.samples[t]; ++i, ++row) {
      const std::size_t cls = i % m;
      const std::size_t j = clusters == 1 ? 0 : rng.index(clusters);
      const double* center = centers.data() + (cls * clusters + j) * d;
      auto out = ds.features.row(row);
      for (std::size_t k = 0; k < d; ++k) out[k] = center[k] + rng.normal();
      std::size_t label = cls;
      if (rng.bernoulli(spec.noise[t])) {
        label = (cls + 1 + rng.index(m - 1)) % m;
      }
      ds.labels.push_back(label);
      ds.tiers.push_back(t);
    }
  }
  return ds;
}

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path) {
  if (off + 4 > b.size()) {
    throw FormatError(path + ": truncated header at byte offset " + std::to_string(off));
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

// Unsigned-byte IDX array: dims from the header, payload row-major.
struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<unsigned char> values;
};

// Reads an IDX file whose magic must equal `expected_magic`
// (0x00000803 for images, 0x00000801 for labels).
inline IdxArray read_idx(const std::string& path, std::uint32_t expected_magic) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.empty()) throw FormatError(path + ": empty file at byte offset 0");
  const std::uint32_t magic = detail::read_be32(bytes, 0, path);
  if (magic != expected_magic) {
    std::ostringstream msg;
    msg << path << ": bad magic 0x" << std::hex << magic << " at byte offset 0, expected 0x"
        << expected_magic;
    throw FormatError(msg.str());
  }
  const std::size_t ndims = magic & 0xFF;
  IdxArray arr;
  std::size_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    arr.dims.push_back(detail::read_be32(bytes, 4 + 4 * i, path));
    total *= arr.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header + total) {
    throw FormatError(path + ": truncated payload, expected " + std::to_string(total) +
                      " bytes after header, file ends at byte offset " +
                      std::to_string(bytes.size()));
  }
  if (bytes.size() > header + total) {
    throw FormatError(path + ": trailing data at byte offset " + std::to_string(header + total));
  }
  arr.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return arr;
}

// MNIST-style image/label pair. Pixels are scaled to [0, 1] and each image
// is flattened row-major into one feature vector.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t num_classes = 0) {
  const auto images = read_idx(images_path, 0x00000803);
  const auto labels = read_idx(labels_path, 0x00000801);
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) {
    throw FormatError(labels_path + ": " + std::to_string(labels.dims[0]) + " labels for " +
                      std::to_string(n) + " images (count at byte offset 4)");
  }
  if (n == 0) throw FormatError(images_path + ": no images (count at byte offset 4)");
  const std::size_t d = images.dims[1] * images.dims[2];
  Dataset ds;
  ds.features = Tensor2D(n, d);
  for (std::size_t i = 0; i < n * d; ++i) ds.features.data[i] = images.values[i] / 255.0;
  std::size_t max_label = 0;
  for (auto v : labels.values) {
    ds.labels.push_back(v);
    max_label = std::max<std::size_t>(max_label, v);
  }
  ds.num_classes = num_classes ? num_classes : std::max<std::size_t>(max_label + 1, 2);
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] >= ds.num_classes) {
      throw FormatError(labels_path + ": label " + std::to_string(ds.labels[i]) +
                        " out of range at byte offset " + std::to_string(8 + i));
    }
  }
  return ds;
}

// Which CSV column holds the label; every other column except the optional
// tier column is a numeric feature.
struct CsvSchema {
  std::string label_column = "label";
  std::string tier_column;  // empty: no tiers
  std::size_t num_classes = 0;  // 0: infer from the largest label
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<std::size_t> parse_index(const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ":1: missing header row");
  const auto header = detail::split_csv_line(line);
  std::optional<std::size_t> label_col, tier_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_column) label_col = c;
    else if (!schema.tier_column.empty() && header[c] == schema.tier_column) tier_col = c;
    else feature_cols.push_back(c);
  }
  if (!label_col) throw FormatError(path + ":1: no '" + schema.label_column + "' column");
  if (!schema.tier_column.empty() && !tier_col) {
    throw FormatError(path + ":1: no '" + schema.tier_column + "' column");
  }
  if (feature_cols.empty()) throw FormatError(path + ":1: no feature columns");

  std::vector<double> values;
  Dataset ds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (cells.size() != header.size()) {
      throw FormatError(where + "expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
    }
    for (auto c : feature_cols) {
      auto v = detail::parse_double(cells[c]);
      if (!v) throw FormatError(where + "non-numeric feature '" + cells[c] + "' in column '" + header[c] + "'");
      values.push_back(*v);
    }
    auto y = detail::parse_index(cells[*label_col]);
    if (!y || (schema.num_classes && *y >= schema.num_classes)) {
      throw FormatError(where + "unknown label '" + cells[*label_col] + "'");
    }
    ds.labels.push_back(*y);
    if (tier_col) {
      auto t = detail::parse_index(cells[*tier_col]);
      if (!t) throw FormatError(where + "bad tier '" + cells[*tier_col] + "'");
      ds.tiers.push_back(*t);
    }
  }
  if (ds.labels.empty()) throw FormatError(path + ": no data rows");
  ds.features = Tensor2D(ds.labels.size(), feature_cols.size(), std::move(values));
  std::size_t max_label = 0;
  for (auto y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = schema.num_classes ? schema.num_classes : std::max<std::size_t>(max_label + 1, 2);
  return ds;
}

// Deterministic Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

struct Split {
  Dataset train;
  Dataset test;
};

// Random disjoint split; floor(n * fraction) samples go to train, with at
// least one sample on each side.
inline Split split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (ds.size() < 2) throw ConfigError("need at least 2 samples to split");
  const auto perm = permutation(ds.size(), mix_seed(seed, 0x5711));
  std::size_t n_train = static_cast<std::size_t>(static_cast<double>(ds.size()) * train_fraction);
  n_train = std::clamp<std::size_t>(n_train, 1, ds.size() - 1);
  std::vector<std::size_t> tr(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> te(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return {ds.subset(tr), ds.subset(te)};
}

// Minibatches of sample indices for one epoch, shuffled by (seed, epoch).
// The last batch may be short.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto perm = permutation(n, mix_seed(seed, 0xBA7C4, epoch));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    const std::size_t end = std::min(n, i + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace cascade
