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

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cascade/cli.hpp"

namespace cascade {
namespace {

namespace fs = std::filesystem;

RunConfig parse(const std::string& text, const std::vector<std::string>& overrides = {}) {
  auto doc = parse_config_text(text, "test");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

std::string config_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsParse) {
  const auto c = parse("{}");
  EXPECT_EQ(c.data.source, "tiered");
  EXPECT_FALSE(c.alpha_set);
  EXPECT_EQ(c.train.mode, TrainMode::Joint);
  EXPECT_EQ(c.train.reward().convention, CostConvention::Inclusive);
  EXPECT_EQ(c.train.reward().loss, RewardLoss::ZeroOne);
  EXPECT_EQ(c.derived(7), 7u);
}

TEST(Config, OverridesReachNestedKeys) {
  const auto c = parse("{}", {"train.alpha=0.2", "train.mode=simplified", "model.classifier_hidden=[[3],[9]]",
                              "seed=12"});
  EXPECT_TRUE(c.alpha_set);
  EXPECT_DOUBLE_EQ(c.train.alpha, 0.2);
  EXPECT_EQ(c.train.mode, TrainMode::Simplified);
  EXPECT_EQ(c.model.classifier_hidden, (std::vector<std::vector<std::size_t>>{{3}, {9}}));
  EXPECT_EQ(c.derived(7), 19u);
  auto doc = nlohmann::json::object();
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "a..b=1"), ConfigError);
  doc["x"] = 1;
  EXPECT_THROW(apply_override(doc, "x.y=1"), ConfigError);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_NE(config_error(R"({"trian": {}})").find("unknown key"), std::string::npos);
  EXPECT_NE(config_error(R"({"train": {"alfa": 0.1}})").find("train.alfa"), std::string::npos);
}

TEST(Config, EveryErrorIsReported) {
  const auto msg = config_error(R"({"train": {"alpha": -1, "mode": "frozen"}, "bogus": 1})");
  EXPECT_EQ(msg.rfind("3 configuration error(s):", 0), 0u) << msg;
  EXPECT_NE(msg.find("train.alpha"), std::string::npos);
  EXPECT_NE(msg.find("train.mode"), std::string::npos);
  EXPECT_NE(msg.find("bogus"), std::string::npos);
  EXPECT_THROW(parse("[1, 2]"), ConfigError);
  EXPECT_THROW(parse("{"), ConfigError);
}

TEST(Config, DigestTracksContentOnly) {
  const auto a = parse(R"({"seed": 3, "train": {"alpha": 0.1, "epochs": 4}})");
  const auto b = parse(R"({"train": {"epochs": 4, "alpha": 0.1}, "seed": 3})");
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_EQ(config_digest(a).size(), 16u);
  const auto c = parse(R"({"seed": 3, "train": {"alpha": 0.1, "epochs": 5}})");
  EXPECT_NE(config_digest(a), config_digest(c));
  // spelling out a default is the same configuration
  const auto d = parse(R"({"seed": 3, "train": {"alpha": 0.1, "epochs": 4, "mode": "joint"}})");
  EXPECT_EQ(config_digest(a), config_digest(d));
  EXPECT_EQ(config_digest(parse(to_json(a).dump())), config_digest(a));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("cascade_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  int run(std::vector<std::string> args) {
    std::ostringstream log, err;
    const int code = cli::run(args, log, err);
    last_err_ = err.str();
    return code;
  }

  std::vector<std::string> with_tiny(const std::string& cmd, const std::string& out,
                                     std::vector<std::string> extra = {}) {
    std::vector<std::string> a{cmd, "--config", tiny_, "--out", (root_ / out).string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }

  static CsvTable table(const fs::path& p) { return parse_csv_text(read_text_file(p)); }

  fs::path root_;
  std::string tiny_ = (fs::path(CASCADE_SOURCE_DIR) / "configs" / "tiny.json").string();
  std::string last_err_;
};

TEST_F(CliTest, ArgumentErrorsExitWithConfigCode) {
  EXPECT_EQ(run({}), cli::kConfig);
  EXPECT_EQ(run({"fly", "--out", "x"}), cli::kConfig);
  EXPECT_EQ(run({"train", "--alpha", "0.1"}), cli::kConfig);
  EXPECT_EQ(run(with_tiny("train", "a")), cli::kConfig);
  EXPECT_NE(last_err_.find("alpha"), std::string::npos);
  EXPECT_EQ(run(with_tiny("train", "b", {"--alpha", "0.1", "--mode", "frozen"})), cli::kConfig);
  EXPECT_EQ(run(with_tiny("sweep", "c", {"--set", "sweep.alphas=[0.1]"})), cli::kConfig);
  EXPECT_EQ(run(with_tiny("calibrate", "d", {"--budget", "0.0001"})), cli::kConfig);
  EXPECT_EQ(run({"pretrain", "--config", (root_ / "none.json").string(), "--out", (root_ / "e").string()}),
            cli::kConfig);
  EXPECT_EQ(run({"--help"}), cli::kOk);
}

TEST_F(CliTest, DataErrorsExitWithDataCode) {
  EXPECT_EQ(run(with_tiny("pretrain", "a", {"--set", "data.source=csv", "--set",
                                            "data.csv.path=" + (root_ / "missing.csv").string()})),
            cli::kData);
  EXPECT_EQ(run(with_tiny("evaluate", "b", {"--checkpoint", (root_ / "missing.json").string()})), cli::kData);
  EXPECT_EQ(run({"report", "--in", root_.string(), "--out", (root_ / "c").string()}), cli::kData);
}

TEST_F(CliTest, GradcheckCanonicalPassesAndBadEpsilonIsConfig) {
  ASSERT_EQ(run({"gradcheck", "--out", (root_ / "g").string()}), cli::kOk) << last_err_;
  const auto t = table(root_ / "g" / "gradcheck.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"check", "value", "threshold", "pass"}));
  ASSERT_FALSE(t.rows.empty());
  for (const auto& r : t.rows) EXPECT_EQ(r[3], "1") << r[0];
  EXPECT_EQ(run({"gradcheck", "--out", (root_ / "h").string(), "--set", "gradcheck.eps=1"}), cli::kConfig);
}

TEST_F(CliTest, ManifestListsEveryArtifactWithItsHash) {
  ASSERT_EQ(run(with_tiny("pretrain", "p")), cli::kOk) << last_err_;
  const auto man = nlohmann::json::parse(read_text_file(root_ / "p" / "manifest.json"));
  EXPECT_EQ(man["format"], "cascade-run-manifest");
  EXPECT_EQ(man["command"], "pretrain");
  EXPECT_EQ(man["config_digest"], config_digest(load_config(tiny_)));
  std::set<std::string> listed;
  std::string prev;
  for (const auto& a : man["artifacts"]) {
    const std::string path = a["path"];
    EXPECT_LT(prev, path);
    prev = path;
    listed.insert(path);
    EXPECT_EQ(a["fnv1a64"], hex64(fnv1a64(read_text_file(root_ / "p" / path))));
  }
  std::set<std::string> on_disk;
  for (const auto& e : fs::recursive_directory_iterator(root_ / "p")) {
    if (e.is_regular_file()) on_disk.insert(fs::relative(e.path(), root_ / "p").generic_string());
  }
  on_disk.erase("manifest.json");
  EXPECT_EQ(listed, on_disk);
  EXPECT_TRUE(listed.count("checkpoint.json"));
  EXPECT_TRUE(listed.count("static_baselines.csv"));
}

TEST_F(CliTest, ModesProduceDistinctManifests) {
  ASSERT_EQ(run(with_tiny("pretrain", "p")), cli::kOk) << last_err_;
  const auto ckpt = (root_ / "p" / "checkpoint.json").string();
  ASSERT_EQ(run(with_tiny("train", "j", {"--alpha", "0.01", "--checkpoint", ckpt})), cli::kOk) << last_err_;
  ASSERT_EQ(run(with_tiny("train", "s", {"--alpha", "0.01", "--checkpoint", ckpt, "--mode", "simplified"})),
            cli::kOk)
      << last_err_;
  const auto mj = nlohmann::json::parse(read_text_file(root_ / "j" / "manifest.json"));
  const auto ms = nlohmann::json::parse(read_text_file(root_ / "s" / "manifest.json"));
  EXPECT_EQ(mj["mode"], "joint");
  EXPECT_EQ(ms["mode"], "simplified");
  EXPECT_NE(mj["config_digest"], ms["config_digest"]);
  // simplified mode leaves the pretrained classifiers untouched
  const auto start = load_cascade(ckpt);
  const auto simple = load_cascade(root_ / "s" / "checkpoint.json");
  const auto joint = load_cascade(root_ / "j" / "checkpoint.json");
  for (std::size_t k = 0; k < start.stages(); ++k) {
    EXPECT_EQ(simple.classifiers[k].layers, start.classifiers[k].layers);
  }
  EXPECT_NE(joint.classifiers.back().layers, start.classifiers.back().layers);
  const auto log = table(root_ / "j" / "train_metrics.csv");
  EXPECT_EQ(log.rows.size(), load_config(tiny_).train.epochs);
}

TEST_F(CliTest, SweepAndReport) {
  ASSERT_EQ(run(with_tiny("sweep", "sw")), cli::kOk) << last_err_;
  const auto cfg = load_config(tiny_);
  const std::size_t K = cfg.model.classifier_hidden.size();
  const auto frontier = table(root_ / "sw" / "frontier.csv");
  EXPECT_EQ(frontier.schema, "cascade-frontier v1");
  ASSERT_EQ(frontier.rows.size(), cfg.sweep_alphas.size());
  for (const auto& r : frontier.rows) EXPECT_EQ(r[frontier.column("status")], "ok");

  ASSERT_EQ(run({"report", "--in", (root_ / "sw").string(), "--out", (root_ / "r1").string()}), cli::kOk)
      << last_err_;
  ASSERT_EQ(run({"report", "--in", (root_ / "sw").string(), "--out", (root_ / "r2").string()}), cli::kOk);
  const auto curve = table(root_ / "r1" / "frontier_curve.csv");
  EXPECT_EQ(curve.rows.size(), cfg.sweep_alphas.size() + K);
  EXPECT_EQ(read_text_file(root_ / "r1" / "frontier_curve.csv"), read_text_file(root_ / "r2" / "frontier_curve.csv"));

  const auto ev = root_ / "sw" / "alpha_1";
  ASSERT_TRUE(fs::exists(ev / "eval_report.json"));
  ASSERT_EQ(run({"report", "--in", ev.string(), "--out", (root_ / "r3").string()}), cli::kOk) << last_err_;
  const auto hist = table(root_ / "r3" / "assignment_histogram.csv");
  ASSERT_EQ(hist.rows.size(), K);
  double total = 0.0;
  for (const auto& r : hist.rows) total += std::stod(r[hist.column("fraction")]);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(table(root_ / "r3" / "accuracy_matrix.csv").rows.size(), K * K);
}

TEST_F(CliTest, WritesStayInsideOutputDirectory) {
  auto listing = [](const fs::path& dir) {
    std::set<std::string> s;
    for (const auto& e : fs::directory_iterator(dir)) s.insert(e.path().filename().string());
    return s;
  };
  const auto tmp_before = listing(fs::temp_directory_path());
  const auto cwd_before = listing(fs::current_path());
  ASSERT_EQ(run(with_tiny("train", "nested/out", {"--alpha", "0.01"})), cli::kOk) << last_err_;
  auto tmp_after = listing(fs::temp_directory_path());
  EXPECT_EQ(tmp_after, tmp_before);
  EXPECT_EQ(listing(fs::current_path()), cwd_before);
  EXPECT_EQ(listing(root_), (std::set<std::string>{"nested"}));
  EXPECT_EQ(listing(root_ / "nested"), (std::set<std::string>{"out"}));
}

}  // namespace
}  // namespace cascade
