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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cascade/data.hpp"

namespace cascade {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("cascade_data_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }

 private:
  fs::path path_;
};

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16 & 0xFF), static_cast<char>(v >> 8 & 0xFF),
          static_cast<char>(v & 0xFF)};
}

TEST(GenTiered, ShapesAndTiers) {
  TierSpec spec{3, 4, {5.0, 2.0}, {0.0, 0.1}, {1, 2}, {40, 60}, 9};
  const auto ds = gen_tiered(spec);
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(ds.dim(), 3u);
  EXPECT_EQ(ds.num_classes, 4u);
  EXPECT_EQ(ds.num_tiers(), 2u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.tiers[i], i < 40 ? 0u : 1u);
    EXPECT_LT(ds.labels[i], 4u);
  }
  EXPECT_NO_THROW(validate(ds));
}

TEST(GenTiered, SameSeedSameData) {
  TierSpec spec{3, 3, {5.0, 2.0}, {0.0, 0.1}, {1, 2}, {30, 30}, 9};
  const auto a = gen_tiered(spec);
  const auto b = gen_tiered(spec);
  EXPECT_EQ(a.features.data, b.features.data);
  EXPECT_EQ(a.labels, b.labels);
  spec.seed = 10;
  EXPECT_NE(gen_tiered(spec).features.data, a.features.data);
}

TEST(GenTiered, WideSeparationIsNearestCentroidSeparable) {
  TierSpec spec{5, 4, {60.0}, {0.0}, {1}, {400}, 3};
  const auto ds = gen_tiered(spec);
  std::vector<std::vector<double>> centroid(4, std::vector<double>(5, 0.0));
  std::vector<double> count(4, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.x(i);
    for (std::size_t k = 0; k < 5; ++k) centroid[ds.labels[i]][k] += x[k];
    ++count[ds.labels[i]];
  }
  for (std::size_t c = 0; c < 4; ++c)
    for (double& v : centroid[c]) v /= count[c];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.x(i);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 4; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < 5; ++k) d += (x[k] - centroid[c][k]) * (x[k] - centroid[c][k]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hits += best == ds.labels[i];
  }
  EXPECT_EQ(hits, ds.size());
}

TEST(GenTiered, LabelNoiseRateWithinBound) {
  const double noise = 0.2;
  const std::size_t n = 20000;
  TierSpec spec{2, 3, {3.0}, {noise}, {1}, {n}, 4};
  const auto ds = gen_tiered(spec);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < n; ++i) flipped += ds.labels[i] != i % 3;
  const double rate = static_cast<double>(flipped) / n;
  EXPECT_NEAR(rate, noise, 4.0 * std::sqrt(noise * (1 - noise) / n));
}

TEST(GenTiered, InvalidSpecs) {
  const TierSpec good{2, 2, {3.0, 1.0}, {0.0, 0.1}, {1, 2}, {10, 10}, 0};
  EXPECT_NO_THROW(validate(good));
  auto s = good;
  s.noise = {0.0};
  EXPECT_THROW(gen_tiered(s), ConfigError);
  s = good;
  s.separation = {1.0, 3.0};
  EXPECT_THROW(gen_tiered(s), ConfigError);
  s = good;
  s.noise = {0.0, 0.5};
  EXPECT_THROW(gen_tiered(s), ConfigError);
  s = good;
  s.num_classes = 1;
  EXPECT_THROW(gen_tiered(s), ConfigError);
  s = good;
  s.samples = {10, 0};
  EXPECT_THROW(gen_tiered(s), ConfigError);
}

TEST(LoadIdx, HandFixture) {
  TempDir dir;
  const auto images = dir.file("img", be32(0x803) + be32(2) + be32(2) + be32(2) +
                                          std::string("\x00\xff\x33\x66\x01\x02\x03\x04", 8));
  const auto labels = dir.file("lbl", be32(0x801) + be32(2) + std::string("\x01\x00", 2));
  const auto ds = load_idx(images, labels);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 4u);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_DOUBLE_EQ(ds.x(0)[0], 0.0);
  EXPECT_DOUBLE_EQ(ds.x(0)[1], 1.0);
  EXPECT_DOUBLE_EQ(ds.x(0)[2], 0x33 / 255.0);
  EXPECT_DOUBLE_EQ(ds.x(1)[3], 4 / 255.0);
  EXPECT_EQ(load_idx(images, labels, 10).num_classes, 10u);
  EXPECT_THROW(load_idx(images, labels, 1), FormatError);
}

TEST(LoadIdx, MalformedFiles) {
  TempDir dir;
  const auto images = dir.file("img", be32(0x803) + be32(2) + be32(1) + be32(1) + std::string("\x01\x02", 2));
  const auto three = dir.file("lbl3", be32(0x801) + be32(3) + std::string("\x00\x01\x00", 3));
  EXPECT_THROW(load_idx(images, three), FormatError);
  EXPECT_THROW(load_idx(images, dir.file("empty", "")), FormatError);
  EXPECT_THROW(load_idx(images, dir.file("magic", be32(0x803) + be32(2) + std::string("\x00\x01", 2))), FormatError);
  EXPECT_THROW(load_idx(images, dir.file("short", be32(0x801) + be32(2) + std::string("\x00", 1))), FormatError);
  EXPECT_THROW(load_idx(images, dir.file("trail", be32(0x801) + be32(2) + std::string("\x00\x01\x01", 3))),
               FormatError);
  EXPECT_THROW(load_idx(images, (fs::temp_directory_path() / "cascade_missing_idx").string()), FormatError);
}

TEST(LoadCsv, ValidFile) {
  TempDir dir;
  const auto p = dir.file("ok.csv", "a,label,b,tier\n0.5,1,-2,0\n1e-3, 0 ,3.25,1\n\n");
  CsvSchema schema;
  schema.tier_column = "tier";
  const auto ds = load_csv(p, schema);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(ds.tiers, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(ds.features.data, (std::vector<double>{0.5, -2.0, 1e-3, 3.25}));
  EXPECT_EQ(ds.num_classes, 2u);
}

TEST(LoadCsv, MalformedFilesNameTheLine) {
  TempDir dir;
  auto expect_format = [](const std::string& path, const std::string& fragment) {
    try {
      load_csv(path);
      ADD_FAILURE() << "no FormatError for " << path;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_format(dir.file("ragged.csv", "x,label\n1,0\n2\n"), ":3:");
  expect_format(dir.file("text.csv", "x,label\n1,0\nabc,1\n"), ":3:");
  expect_format(dir.file("label.csv", "x,label\n1,-1\n"), ":2:");
  expect_format(dir.file("nolabel.csv", "x,y\n1,0\n"), "label");
  expect_format(dir.file("empty.csv", ""), "header");
  expect_format(dir.file("header_only.csv", "x,label\n"), "no data");
  CsvSchema schema;
  schema.num_classes = 2;
  EXPECT_THROW(load_csv(dir.file("range.csv", "x,label\n1,2\n"), schema), FormatError);
}

TEST(Split, DisjointAndComplete) {
  TierSpec spec{2, 2, {3.0}, {0.0}, {1}, {100}, 1};
  auto ds = gen_tiered(spec);
  // tag every sample by its first feature
  for (std::size_t i = 0; i < ds.size(); ++i) ds.features.row(i)[0] = static_cast<double>(i);
  const auto s = split_dataset(ds, 0.8, 3);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.test.size(), 20u);
  std::set<double> seen;
  for (const auto* part : {&s.train, &s.test}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      const double id = part->x(i)[0];
      EXPECT_TRUE(seen.insert(id).second);
      EXPECT_EQ(part->labels[i], ds.labels[static_cast<std::size_t>(id)]);
      EXPECT_EQ(part->tiers[i], ds.tiers[static_cast<std::size_t>(id)]);
    }
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(split_dataset(ds, 0.8, 3).train.features.data, s.train.features.data);
  EXPECT_THROW(split_dataset(ds, 1.0, 3), ConfigError);
  EXPECT_THROW(split_dataset(ds, 0.0, 3), ConfigError);
}

TEST(EpochBatches, PartitionAndDeterminism) {
  const auto b = epoch_batches(103, 10, 5, 2);
  EXPECT_EQ(b.size(), 11u);
  EXPECT_EQ(b.back().size(), 3u);
  std::vector<int> hit(103, 0);
  for (const auto& batch : b)
    for (auto i : batch) ++hit[i];
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_EQ(epoch_batches(103, 10, 5, 2), b);
  EXPECT_NE(epoch_batches(103, 10, 5, 3), b);
  EXPECT_NE(epoch_batches(103, 10, 6, 2), b);
  EXPECT_THROW(epoch_batches(10, 0, 5, 0), ConfigError);
}

TEST(ValidateDataset, RejectsInconsistentData) {
  TierSpec spec{2, 3, {3.0}, {0.0}, {1}, {9}, 1};
  auto ds = gen_tiered(spec);
  auto bad = ds;
  bad.labels[0] = 3;
  EXPECT_ANY_THROW(validate(bad));
  bad = ds;
  bad.labels.pop_back();
  EXPECT_ANY_THROW(validate(bad));
  bad = ds;
  bad.tiers.pop_back();
  EXPECT_ANY_THROW(validate(bad));
}

}  // namespace
}  // namespace cascade
