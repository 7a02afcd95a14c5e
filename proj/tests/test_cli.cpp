/*
 * Copyright 2026 The opendet-lab Authors.
 *
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


// Exit codes of the installed command line tool.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

namespace fs = std::filesystem;

const std::string kFixtures = OPENDET_FIXTURES;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("opendet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  int run(const std::string& args) const {
    const std::string cmd = std::string("\"") + OPENDET_CLI + "\" " + args + " >\"" + (dir_ / "stdout.txt").string() +
                            "\" 2>\"" + (dir_ / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string out(const std::string& leaf) const { return (dir_ / leaf).string(); }

  std::string stderr_text() const {
    std::ifstream is(dir_ / "stderr.txt");
    return {std::istreambuf_iterator<char>(is), {}};
  }

  fs::path dir_;
};

std::string fx(const std::string& rel) { return "\"" + kFixtures + "/" + rel + "\""; }

TEST_F(Cli, HelpSucceeds) { EXPECT_EQ(run("--help"), 0); }

TEST_F(Cli, MissingSubcommandFails) { EXPECT_NE(run(""), 0); }

TEST_F(Cli, UnknownSubcommandFails) { EXPECT_NE(run("frobnicate"), 0); }

TEST_F(Cli, MissingRequiredFlagFails) {
  EXPECT_NE(run("eval --det " + fx("three_image/detections.json") + " --split " + fx("three_image/split.json") +
                " --out " + out("o")),
            0);
}

TEST_F(Cli, EvalWritesReport) {
  ASSERT_EQ(run("eval --gt " + fx("three_image/ground_truth.json") + " --det " + fx("three_image/detections.json") +
                " --split " + fx("three_image/split.json") + " --out " + out("o")),
            0);
  EXPECT_TRUE(fs::exists(out("o/report.csv")));
  EXPECT_TRUE(fs::exists(out("o/manifest.json")));
}

TEST_F(Cli, EvalOnMissingFileFails) {
  EXPECT_EQ(run("eval --gt " + out("absent.json") + " --det " + fx("three_image/detections.json") + " --split " +
                fx("three_image/split.json") + " --out " + out("o")),
            1);
  EXPECT_NE(stderr_text().find("error:"), std::string::npos);
}

TEST_F(Cli, TrainRunsFromConfigFile) {
  {
    std::ofstream cfg(out("run.cfg"));
    cfg << "preset=full\ntrain.iterations=40\ntrain.warmup=4\ntrain.eval_per_known=10\ntrain.eval_per_unknown=10\n";
  }
  ASSERT_EQ(run("train --config " + out("run.cfg") + " --seed 4 --out " + out("t")), 0);
  EXPECT_TRUE(fs::exists(out("t/checkpoint.bin")));
  std::ifstream cfg(out("t/config.txt"));
  const std::string text{std::istreambuf_iterator<char>(cfg), {}};
  EXPECT_NE(text.find("seed=4"), std::string::npos);
}

TEST_F(Cli, TrainRejectsUnknownConfigKey) {
  {
    std::ofstream cfg(out("bad.cfg"));
    cfg << "preset=full\ntrain.iteration=40\n";
  }
  EXPECT_EQ(run("train --config " + out("bad.cfg") + " --out " + out("t")), 1);
  EXPECT_NE(stderr_text().find("train.iteration"), std::string::npos);
}

TEST_F(Cli, SplitShortfallFails) {
  EXPECT_EQ(run("split --spec " + fx("split/unsatisfiable_spec.json") + " --known-source " +
                fx("split/known_source.json") + " --open-source " + fx("split/open_source.json") + " --out " +
                out("s")),
            1);
}

TEST_F(Cli, SplitSucceeds) {
  EXPECT_EQ(run("split --spec " + fx("split/t2_spec.json") + " --known-source " + fx("split/known_source.json") +
                " --open-source " + fx("split/open_source.json") + " --out " + out("s")),
            0);
  EXPECT_TRUE(fs::exists(out("s/split.json")));
}

TEST_F(Cli, GradcheckPasses) { EXPECT_EQ(run("gradcheck --seed 2026 --trials 3"), 0); }

TEST_F(Cli, PlotRejectsUnknownKind) { EXPECT_NE(run("plot --kind histogram --out " + out("p")), 0); }

TEST_F(Cli, PlotWeightingCurves) {
  EXPECT_EQ(run("plot --kind weighting_curves --alpha 1 --alpha 2 --out " + out("p")), 0);
  EXPECT_TRUE(fs::exists(out("p/weighting_curves.svg")));
}

}  // namespace
