// Copyright 2026 The nshash Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "nsh/cli.h"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nsh/hashcore.h"

namespace nsh {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nsh");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code =
      cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* env = std::getenv("NSH_TEST_TMPDIR");
    dir_ = fs::path(env ? env : fs::temp_directory_path().string()) /
           ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string Path(const std::string& name) const { return (dir_ / name).string(); }
  void WriteText(const std::string& name, const std::string& text) const {
    std::ofstream(Path(name)) << text;
  }

  fs::path dir_;
};

double ReportValue(const std::string& report, const std::string& key) {
  const auto pos = report.find("\n" + key + "=");
  if (pos == std::string::npos) return -1.0;
  return std::stod(report.substr(pos + key.size() + 2));
}

TEST_F(CliTest, SynthTrainEncodeEval) {
  ASSERT_EQ(Cli({"synth", "--k", "3", "--per-cluster", "30", "--query-per-cluster",
                 "5", "--dx", "8", "--seed", "2", "--out", Path("s")})
                .code,
            kExitOk);
  WriteText("cfg", "hidden=16\nd_b=8\nd_z=8\nbatch=10\nepochs=2\n");
  const Outcome tr = Cli({"train", "--features", Path("s.db.nshf"), "--labels",
                          Path("s.db.nshl"), "--config", Path("cfg"), "--out",
                          Path("model.nshp"), "--history", Path("hist.csv")});
  ASSERT_EQ(tr.code, kExitOk) << tr.err;
  EXPECT_NE(tr.out.find("steps=14"), std::string::npos) << tr.out;
  std::ifstream hist(Path("hist.csv"));
  std::string header;
  std::getline(hist, header);
  EXPECT_EQ(header, "step,loss,l_sorted,l_r");

  for (const char* side : {"db", "query"}) {
    const Outcome enc =
        Cli({"encode", "--ckpt", Path("model.nshp"), "--features",
             Path(std::string("s.") + side + ".nshf"), "--out",
             Path(std::string(side) + ".nshc")});
    ASSERT_EQ(enc.code, kExitOk) << enc.err;
  }
  EXPECT_EQ(load_packed_codes(Path("db.nshc")).size(), 75u);
  EXPECT_EQ(load_packed_codes(Path("query.nshc")).bits(), 8u);

  const Outcome ev = Cli({"eval", "--db-codes", Path("db.nshc"), "--query-codes",
                          Path("query.nshc"), "--db-labels", Path("s.db.nshl"),
                          "--query-labels", Path("s.query.nshl"), "--k", "20",
                          "--pr-out", Path("pr.csv")});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  EXPECT_EQ(ev.out[0], '#');
  const double map = ReportValue(ev.out, "map@20");
  EXPECT_GE(map, 0.0);
  EXPECT_LE(map, 1.0);
  EXPECT_GE(ReportValue(ev.out, "p@h2"), 0.0);
  std::ifstream pr(Path("pr.csv"));
  std::getline(pr, header);
  EXPECT_EQ(header, "hamming_threshold,recall,precision");
}

TEST_F(CliTest, EvalWithMismatchedWidthsIsADataError) {
  save_packed_codes(Path("a.nshc"), pack_codes(Mat(3, 16, 1.0)));
  save_packed_codes(Path("b.nshc"), pack_codes(Mat(2, 32, 1.0)));
  WriteText("a.csv", "1\n0\n1\n");
  WriteText("b.csv", "1\n1\n");
  const Outcome r = Cli({"eval", "--db-codes", Path("a.nshc"), "--query-codes",
                         Path("b.nshc"), "--db-labels", Path("a.csv"),
                         "--query-labels", Path("b.csv")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("16"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("32"), std::string::npos) << r.err;
}

TEST_F(CliTest, UsageErrors) {
  const Outcome unknown_cmd = Cli({"decode"});
  EXPECT_EQ(unknown_cmd.code, kExitUsage);
  EXPECT_FALSE(unknown_cmd.err.empty());

  const Outcome unknown_flag = Cli({"synth", "--out", Path("x"), "--colour", "red"});
  EXPECT_EQ(unknown_flag.code, kExitUsage);
  EXPECT_NE(unknown_flag.err.find("synth"), std::string::npos);

  EXPECT_EQ(Cli({}).code, kExitUsage);
  EXPECT_EQ(Cli({"train", "--out", Path("m")}).code, kExitUsage);
  EXPECT_EQ(Cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, DataErrors) {
  EXPECT_EQ(Cli({"encode", "--ckpt", Path("missing.nshp"), "--features",
                 Path("missing.nshf"), "--out", Path("o.nshc")})
                .code,
            kExitData);
  WriteText("bad.csv", "1,2\n3\n");
  WriteText("cfg", "epochs=1\n");
  EXPECT_EQ(Cli({"train", "--features", Path("bad.csv"), "--out", Path("m.nshp")})
                .code,
            kExitData);
  WriteText("badcfg", "epochz=1\n");
  WriteText("ok.csv", "1,2\n3,4\n");
  const Outcome bad_cfg = Cli({"train", "--features", Path("ok.csv"), "--config",
                               Path("badcfg"), "--out", Path("m.nshp")});
  EXPECT_EQ(bad_cfg.code, kExitData);
  EXPECT_NE(bad_cfg.err.find("epochz"), std::string::npos);
  EXPECT_EQ(Cli({"ablate", "--variant", "decoder", "--db-features", Path("ok.csv"),
                 "--db-labels", Path("ok.csv"), "--query-features", Path("ok.csv"),
                 "--query-labels", Path("ok.csv")})
                .code,
            kExitData);
}

TEST_F(CliTest, HardSortAblationScoresBelowFull) {
  ASSERT_EQ(Cli({"synth", "--k", "10", "--per-cluster", "220",
                 "--query-per-cluster", "20", "--dx", "64", "--cluster-stddev",
                 "1.0", "--seed", "1", "--out", Path("bench")})
                .code,
            kExitOk);
  WriteText("cfg", "tau_s=0.15\ntau_c=0.05\n");
  auto map_for = [&](const std::string& variant) {
    const Outcome r =
        Cli({"ablate", "--variant", variant, "--db-features", Path("bench.db.nshf"),
             "--db-labels", Path("bench.db.nshl"), "--query-features",
             Path("bench.query.nshf"), "--query-labels", Path("bench.query.nshl"),
             "--config", Path("cfg"), "--k", "100"});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("variant=" + variant), std::string::npos);
    return ReportValue(r.out, "map@100");
  };
  EXPECT_LT(map_for("hard_sort"), map_for("full"));
}

}  // namespace
}  // namespace nsh
