/*
 * Copyright 2026 The evfuse Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "evfuse_cli/cli.h"

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "evfuse/calibration.h"
#include "evfuse/eval.h"
#include "evfuse/tensor_io.h"
#include "evfuse/training.h"
#include "evfuse_cli/run_config.h"
#include "gtest/gtest.h"
#include "nlohmann/json.hpp"

namespace evfuse::cli {
namespace {

namespace fs = std::filesystem;

constexpr char kTinyConfig[] = R"({
  "data": {"n_subjects": 10, "image_size": 16, "seed": 1},
  "net": {"levels": 2, "base_channels": 4},
  "train": {"iters_stage1": 6, "iters_stage2": 4, "batch": 2},
  "calib": {"n_nodes": 49},
  "eval": {"uce_bins": 4}
}
)";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = Run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path Fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path WriteConfig(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  WriteFileAtomic(p, text);
  return p;
}

std::map<std::string, std::string> Tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), root).string()] = ReadFile(e.path());
    }
  }
  return files;
}

std::size_t CountFiles(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) ++n;
  }
  return n;
}

std::size_t CsvRows(const fs::path& path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n - 1;
}

TEST(RunConfigTest, DefaultsAndResolvedEcho) {
  const RunConfig c = ParseRunConfig("{}");
  EXPECT_EQ(c.data.image_size, RunConfig::Defaults().data.image_size);
  const auto j = nlohmann::json::parse(ResolvedJson(c));
  for (const char* s : {"data", "net", "train", "calib", "eval"}) EXPECT_TRUE(j.contains(s));
  EXPECT_EQ(j.at("train").at("iters_stage1"), c.train.iters_stage1);
  const RunConfig back = ParseRunConfig(ResolvedJson(c));
  EXPECT_EQ(ResolvedJson(back), ResolvedJson(c));
}

TEST(RunConfigTest, ErrorsCarryLineNumbers) {
  try {
    ParseRunConfig("{\n  \"data\": {\n    \"n_subject\": 4\n  }\n}");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
  }
  try {
    ParseRunConfig("{\n  \"net\": {\"levels\": 2},\n  \"train\": {\"batch\": \"four\"}\n}");
    FAIL() << "string accepted as count";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    ParseRunConfig("{\n  \"data\": {\n    \"lesion_rate\": 2.0\n  }\n}");
    FAIL() << "out-of-range value accepted";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(e.line().has_value());
  }
  EXPECT_THROW(ParseRunConfig("{\n \"model\": {}\n}"), ConfigError);
  EXPECT_THROW(ParseRunConfig("{\n \"data\": {,}\n}"), ConfigError);
  EXPECT_THROW(ParseRunConfig("[]"), ConfigError);
  EXPECT_THROW(ParseRunConfig(R"({"data": {"image_size": 18}, "net": {"levels": 3}})"),
               ConfigError);
}

TEST(CliTest, UsageErrorsExitTwo) {
  const fs::path dir = Fresh("evfuse_cli_usage");
  EXPECT_EQ(Cli({}).code, 2);
  EXPECT_EQ(Cli({"bogus", "--out", dir.string()}).code, 2);
  EXPECT_EQ(Cli({"gen-data"}).code, 2);
  EXPECT_EQ(Cli({"gen-data", "--out", dir.string(), "--config", "/nonexistent.json"}).code, 2);
  EXPECT_EQ(Cli({"train-fusion", "--out", dir.string(), "--mode", "fused"}).code, 2);
  EXPECT_EQ(Cli({"evaluate", "--out", dir.string(), "--mode", "local-x"}).code, 2);
  const Result bad = Cli({"gen-data", "--out", dir.string(), "--config",
                          WriteConfig(dir, "{\n\"data\": {\"sizes\": 3}\n}").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("line 2"), std::string::npos) << bad.err;
  EXPECT_EQ(Cli({"--help"}).code, 0);
  const Result v = Cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(kVersion), std::string::npos);
  fs::remove_all(dir);
}

TEST(CliTest, EvaluateWithoutModelReportsMissingCheckpoint) {
  const fs::path dir = Fresh("evfuse_cli_missing");
  const std::string config = WriteConfig(dir, kTinyConfig).string();
  const fs::path out = dir / "run";
  ASSERT_EQ(Cli({"gen-data", "--config", config, "--out", out.string()}).code, 0);
  const Result r = Cli({"evaluate", "--config", config, "--out", out.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing checkpoint"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out / "eval"));
  fs::remove_all(dir);
}

TEST(CliTest, GenDataIsDeterministic) {
  const fs::path dir = Fresh("evfuse_cli_gen");
  const std::string config = WriteConfig(dir, kTinyConfig).string();
  ASSERT_EQ(Cli({"gen-data", "--config", config, "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(Cli({"gen-data", "--config", config, "--out", (dir / "b").string()}).code, 0);
  const auto a = Tree(dir / "a"), b = Tree(dir / "b");
  EXPECT_GT(a.size(), 30u);
  EXPECT_EQ(a, b);
  ASSERT_EQ(Cli({"gen-data", "--config", config, "--seed", "9", "--out",
                 (dir / "c").string()}).code, 0);
  EXPECT_NE(Tree(dir / "c"), a);
  EXPECT_EQ(ReadFile(dir / "a" / "VERSION"), std::string("evfuse ") + kVersion + "\n");
  const auto resolved = nlohmann::json::parse(ReadFile(dir / "c" / "resolved-config.json"));
  EXPECT_EQ(resolved.at("data").at("seed"), 9);
  EXPECT_EQ(resolved.at("data").at("image_size"), 16);
  fs::remove_all(dir);
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(Fresh("evfuse_cli_pipeline"));
    config_ = new std::string(WriteConfig(*dir_, kTinyConfig).string());
    const std::string out = (*dir_ / "run").string();
    for (std::vector<std::string> cmd : std::vector<std::vector<std::string>>{
             {"gen-data"},
             {"train-local"},
             {"train-fusion", "--mode", "combined"},
             {"calibrate", "--mode", "combined"},
             {"predict", "--mode", "combined"},
             {"evaluate", "--mode", "combined"},
             {"evaluate", "--mode", "combined", "--no-calibration"},
             {"report", "--mode", "combined"},
             {"report", "--mode", "combined", "--no-calibration"}}) {
      cmd.insert(cmd.end(), {"--config", *config_, "--out", out});
      const Result r = Cli(cmd);
      ASSERT_EQ(r.code, 0) << cmd[0] << ": " << r.err;
    }
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
    delete config_;
  }
  static fs::path Out() { return *dir_ / "run"; }
  static fs::path* dir_;
  static std::string* config_;
};
fs::path* PipelineTest::dir_ = nullptr;
std::string* PipelineTest::config_ = nullptr;

TEST_F(PipelineTest, ProducesCheckpointsAndReport) {
  for (int m = 0; m < 3; ++m) {
    EXPECT_TRUE(fs::exists(Out() / "models/stage1" / ("local_" + std::to_string(m) + ".evnt")));
    EXPECT_TRUE(fs::exists(Out() / "models/combined" / ("local_" + std::to_string(m) + ".evnt")));
  }
  EXPECT_TRUE(fs::exists(Out() / "models/combined/fusion.evnt"));
  EXPECT_TRUE(fs::exists(Out() / "calibration/combined/recalibration.csv"));
  const auto j = nlohmann::json::parse(ReadFile(Out() / "eval/combined/report.json"));
  for (const char* key : {"psnr", "ssim", "uce_aleatoric", "uce_epistemic"}) {
    ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(j.at(key).contains("mean"));
    EXPECT_TRUE(j.at(key).contains("std"));
  }
  EXPECT_TRUE(j.at("calibrated").get<bool>());
  EXPECT_FALSE(nlohmann::json::parse(ReadFile(Out() / "eval/combined-uncalibrated/report.json"))
                   .at("calibrated")
                   .get<bool>());
  EXPECT_TRUE(fs::exists(Out() / "resolved-config.json"));
  EXPECT_TRUE(fs::exists(Out() / "VERSION"));
}

TEST_F(PipelineTest, PredictionsMatchLibrary) {
  const std::vector<MultimodalSample> test = ReadSplit(Out() / "data", "test");
  std::vector<EvidentialNet> locals;
  for (int m = 0; m < 3; ++m) {
    locals.push_back(LoadCheckpoint(Out() / "models/combined" /
                                    ("local_" + std::to_string(m) + ".evnt")));
  }
  const EvidentialNet fusion = LoadCheckpoint(Out() / "models/combined/fusion.evnt");
  const PipelinePrediction p =
      PredictPipeline(locals, fusion, FusionMode::kCombined, Prepare(test[0]));
  const fs::path sub = Out() / "predictions/combined/test" / SubjectDirName(test[0].subject_id);
  EXPECT_EQ(ReadTensor(sub / "gamma.tnsr"), p.fused.gamma());
  EXPECT_EQ(ReadTensor(sub / "beta.tnsr"), p.fused.beta());
  const Tensor au = ReadTensor(sub / "aleatoric.tnsr");
  const Tensor eu = ReadTensor(sub / "epistemic.tnsr");
  for (std::size_t j = 0; j < au.size(); ++j) {
    EXPECT_EQ(au[j], p.fused.eta()[j] * eu[j]);
  }
  EXPECT_TRUE(fs::exists(sub / "local_1_gamma.tnsr"));
}

TEST_F(PipelineTest, ReportExportsAreConsistent) {
  const fs::path rep = Out() / "report/combined";
  const std::size_t n_test = ReadSplit(Out() / "data", "test").size();
  EXPECT_EQ(CountFiles(rep / "panels", ".pgm"), n_test * 6);
  const auto log = ReadLogCsv(Out() / "logs/stage1/local_0.csv");
  EXPECT_EQ(log.size(), 6u);
  EXPECT_EQ(CsvRows(rep / "loss_curves/stage1_local_0.csv"), 6u);
  EXPECT_EQ(CsvRows(rep / "loss_curves/stage2_combined.csv"), 4u);
  EXPECT_EQ(CsvRows(rep / "per_sample.csv"), n_test);
  EXPECT_EQ(CsvRows(rep / "calibration_curve.csv"), 101u);
  EXPECT_GT(CsvRows(rep / "uce_bins_aleatoric.csv"), 0u);

  // Uncalibrated runs plot the identity map.
  std::istringstream in(ReadFile(Out() / "report/combined-uncalibrated/calibration_curve.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "p_in,p_out");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    EXPECT_NEAR(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)), 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, 101u);
}

TEST_F(PipelineTest, FailedCommandLeavesPriorOutputsIntact) {
  const auto before = Tree(Out() / "models");
  // A diverging learning rate makes training fail after the data loads.
  WriteFileAtomic(*dir_ / "diverging.json",
                  R"({"data": {"n_subjects": 10, "image_size": 16, "seed": 1},
                      "net": {"levels": 2, "base_channels": 4},
                      "train": {"iters_stage1": 6, "iters_stage2": 4, "batch": 2,
                                "lr_stage1": 1e300}})");
  const Result r = Cli({"train-local", "--config", (*dir_ / "diverging.json").string(),
                        "--out", Out().string()});
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_EQ(Tree(Out() / "models"), before);
  for (const auto& e : fs::directory_iterator(Out())) {
    EXPECT_EQ(e.path().filename().string().rfind(".staging", 0), std::string::npos);
  }
}

}  // namespace
}  // namespace evfuse::cli
