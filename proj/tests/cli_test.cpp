// Copyright 2026 The RealCam Authors. All Rights Reserved.
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


#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <gtest/gtest.h>

#include "realcam/app.hpp"

namespace realcam::app {
namespace {

const std::string kCli = REALCAM_CLI;

// Fresh scratch directory per test.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("realcam_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Runs the tool; stdout and stderr land in files under the scratch dir.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = "cd " + dir_.string() + " && " + env + " " + kCli + " " + args + " >" + path("out.txt") +
                            " 2>" + path("err.txt");
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  std::string out() const { return read_text(path("out.txt")); }
  std::string err() const { return read_text(path("err.txt")); }

  fs::path dir_;
};

const std::string kSmall =
    " --data.captures=6 --data.height=64 --data.width=128 --data.eval_fraction=0.34"
    " --model.channels=8 --model.latent_channels=6 --model.window=4 --model.heads=1 --model.global_size=16"
    " --train.batch=2 --train.crop=32 --eval.crop=32";

TEST_F(Cli, TrainEncodeDecodeMatchesEvaluator) {
  ASSERT_EQ(run("gen-data --out d.rcds --seed 3" + kSmall), 0) << err();
  ASSERT_EQ(run("train --dataset d.rcds --out run --train.steps=15" + kSmall), 0) << err();
  ASSERT_EQ(run("encode --checkpoint run/final.rcpt --dataset d.rcds --sample 4 --out x.rcbs --crop 32"), 0) << err();
  double bpp = 0, ms = 0;
  unsigned long long bits = 0;
  std::size_t tiles = 0;
  ASSERT_EQ(std::sscanf(out().c_str(), "bpp %lf bits %llu tiles %zu encode_ms %lf", &bpp, &bits, &tiles, &ms), 4)
      << out();
  ASSERT_EQ(run("decode --checkpoint run/final.rcpt --in x.rcbs --out x.pfm"), 0) << err();

  const sim::Dataset ds = sim::read_dataset(path("d.rcds"));
  const codec::Model m = codec::load_model(path("run/final.rcpt"));
  codec::GlobalCache g(m.cfg.global_size);
  const eval::CaptureResult r = eval::roundtrip(m, ds.at(4), g, 32);
  EXPECT_EQ(read_pfm(path("x.pfm")).v, r.recon.v);
  const eval::RdPoint p = eval::evaluate(m, ds, {4}, 32, "one");
  EXPECT_EQ(eval::num(bpp), eval::num(p.bpp));
  EXPECT_EQ(bits, p.bits);
  EXPECT_EQ(tiles, 8u);
  EXPECT_EQ(codec::pack_streams(r.streams), read_file(path("x.rcbs")));
}

TEST_F(Cli, RawMosaicInput) {
  ASSERT_EQ(run("gen-data --out d.rcds --seed 3" + kSmall), 0) << err();
  ASSERT_EQ(run("train --dataset d.rcds --out run --train.steps=3" + kSmall), 0) << err();
  const sim::Dataset ds = sim::read_dataset(path("d.rcds"));
  write_raw_pgm(path("m.pgm"), ds.at(1).raw);
  const sim::Plane back = read_raw_pgm(path("m.pgm"));
  ASSERT_EQ(back.v.size(), ds.at(1).raw.v.size());
  for (std::size_t i = 0; i < back.v.size(); ++i) ASSERT_NEAR(back.v[i], ds.at(1).raw.v[i], 0.5 / 65535 + 1e-7);
  ASSERT_EQ(run("encode --checkpoint run/final.rcpt --raw m.pgm --out m.rcbs --crop 32"), 0) << err();
  EXPECT_EQ(run("decode --checkpoint run/final.rcpt --in m.rcbs --out m.ppm"), 0) << err();
  EXPECT_TRUE(fs::file_size(path("m.ppm")) > 64u * 128 * 3);
}

TEST_F(Cli, ExitCodes) {
  ASSERT_EQ(run("gen-data --out d.rcds --seed 3" + kSmall), 0) << err();
  ASSERT_EQ(run("train --dataset d.rcds --out a --train.steps=2" + kSmall), 0) << err();
  ASSERT_EQ(run("train --dataset d.rcds --out b --train.steps=2 --seed 9" + kSmall), 0) << err();
  ASSERT_EQ(run("encode --checkpoint a/final.rcpt --dataset d.rcds --sample 0 --out x.rcbs --crop 32"), 0) << err();

  // Config errors: nothing written.
  EXPECT_EQ(run("train --dataset d.rcds --out c --model.bogus=1" + kSmall), kConfigExit);
  EXPECT_NE(err().find("bogus"), std::string::npos);
  EXPECT_EQ(run("train --dataset d.rcds --out c" + kSmall + " --train.crop=48"), kConfigExit);
  EXPECT_EQ(run("train --dataset d.rcds --out c" + kSmall + " --train.crop=256 --model.window=4"), kConfigExit);
  EXPECT_EQ(run("demo --out c" + kSmall + " --train.steps=0"), kConfigExit);
  EXPECT_EQ(run("demo --out c --eval.anchor=nothing" + kSmall), kConfigExit);
  EXPECT_EQ(run("train --dataset d.rcds"), kConfigExit);  // --out missing
  EXPECT_EQ(run("encode --checkpoint a/final.rcpt --out y.rcbs"), kConfigExit);
  EXPECT_FALSE(fs::exists(path("c")));
  EXPECT_FALSE(fs::exists(path("y.rcbs")));

  // I/O
  EXPECT_EQ(run("train --dataset missing.rcds --out c" + kSmall), kIoExit);
  EXPECT_EQ(run("decode --checkpoint a/final.rcpt --in nothing.rcbs --out y.pfm"), kIoExit);
  EXPECT_EQ(run("gen-data --out no/such/dir/d.rcds" + kSmall), kIoExit);
  EXPECT_FALSE(fs::exists(path("c")));
  write_text(path("junk.rcbs"), "not a stream at all, just text");
  EXPECT_EQ(run("decode --checkpoint a/final.rcpt --in junk.rcbs --out y.pfm"), kIoExit);

  // Wrong checkpoint for the stream.
  EXPECT_EQ(run("decode --checkpoint b/final.rcpt --in x.rcbs --out y.pfm"), kMismatchExit);
  const std::string ida = codec::hex64(codec::load_model(path("a/final.rcpt")).id);
  const std::string idb = codec::hex64(codec::load_model(path("b/final.rcpt")).id);
  EXPECT_NE(err().find(ida), std::string::npos) << err();
  EXPECT_NE(err().find(idb), std::string::npos) << err();
  EXPECT_FALSE(fs::exists(path("y.pfm")));
}

TEST_F(Cli, SeedComesFromEnvironmentUnlessGiven) {
  ASSERT_EQ(run("gen-data --out a.rcds" + kSmall, "RC_SEED=7"), 0) << err();
  ASSERT_EQ(run("gen-data --out b.rcds --seed 7" + kSmall), 0) << err();
  ASSERT_EQ(run("gen-data --out c.rcds" + kSmall), 0) << err();
  ASSERT_EQ(run("gen-data --out d.rcds --seed 1" + kSmall, "RC_SEED=7"), 0) << err();
  EXPECT_EQ(read_file(path("a.rcds")), read_file(path("b.rcds")));
  EXPECT_NE(read_file(path("a.rcds")), read_file(path("c.rcds")));
  EXPECT_EQ(read_file(path("c.rcds")), read_file(path("d.rcds")));
  EXPECT_EQ(run("gen-data --out e.rcds" + kSmall, "RC_SEED=seven"), kConfigExit);
}

TEST_F(Cli, ConfigFileThenOverrides) {
  write_text(path("run.conf"), "# desk\nseed = 4\nmodel.channels = 16\ntrain.steps = 10\neval.lambdas = 0,2\n");
  const RunConfig rc = load_run_config(path("run.conf"), {{"train.steps", "20"}}, std::string("9"));
  EXPECT_EQ(rc.seed, 4u);
  EXPECT_EQ(rc.model.channels, 16);
  EXPECT_EQ(rc.train.steps, 20);
  EXPECT_EQ(rc.lambdas, (std::vector<int>{0, 2}));
  EXPECT_EQ(rc.train_config().seed, 4u);
  EXPECT_NE(rc.to_text().find("# from " + path("run.conf")), std::string::npos);
  // The resolved text reads back to the same config.
  const RunConfig again = load_run_config("", parse_key_values(rc.to_text()));
  EXPECT_EQ(again.to_text(), [&] {
    RunConfig c = rc;
    c.provenance = {"command line"};
    return c.to_text();
  }());
  EXPECT_THROW(load_run_config("", {{"train.seed", "3"}}), ConfigError);
  EXPECT_THROW(load_run_config("", {{"colour", "red"}}), ConfigError);
  EXPECT_THROW(load_run_config("", {{"eval.lambdas", "0,0,1,2"}}), ConfigError);
  EXPECT_THROW(load_run_config("", {{"eval.lambdas", "4"}}), ConfigError);
  EXPECT_THROW(load_run_config("", {{"ablate.axes", "cadr,fancy"}}), ConfigError);
  EXPECT_THROW(load_run_config(path("absent.conf"), {}), IoError);
}

TEST_F(Cli, SelftestListsEveryOp) {
  ASSERT_EQ(run("selftest"), 0) << out();
  const std::string o = out();
  for (const auto& c : ad::op_catalog()) EXPECT_NE(o.find("PASS grad " + c.op + " "), std::string::npos) << c.op;
  EXPECT_NE(o.find("max rel err"), std::string::npos);
  EXPECT_NE(o.find("0 failed"), std::string::npos);
}

TEST_F(Cli, BdReportFromEvalRows) {
  std::vector<eval::RdPoint> pts;
  for (int i = 0; i < 4; ++i) {
    eval::RdPoint a;
    a.variant = "a";
    a.lambda_index = i;
    a.bpp = 1.0 / (1 << i);
    a.psnr = 30 - 3 * i;
    a.msssim_db = 12 - i;
    a.delta_e = 3 + i;
    eval::RdPoint b = a;
    b.variant = "b";
    b.psnr += 1;
    pts.push_back(a);
    pts.push_back(b);
  }
  write_text(path("rd.csv"), eval::rd_csv(pts));
  ASSERT_EQ(run("bd-report --rd rd.csv --anchor a --out bd.csv"), 0) << err();
  const std::string bd = read_text(path("bd.csv"));
  EXPECT_NE(bd.find("a,b,bd_psnr_db,1.000000"), std::string::npos) << bd;
  EXPECT_EQ(run("bd-report --rd rd.csv --anchor zzz --out bd2.csv"), kConfigExit);
  EXPECT_EQ(run("bd-report --rd rd.csv --anchor a --method spline --out bd2.csv"), kConfigExit);
}

TEST_F(Cli, DemoCsvsAreByteIdentical) {
  const std::string args = "demo --seed 5 --train.steps=12 --ablate.axes=cadr,coord,csa --ablate.seeds=2" + kSmall;
  ASSERT_EQ(run(args + " --out r1"), 0) << err();
  ASSERT_EQ(run(args + " --out r2 --jobs 2"), 0) << err();
  for (const char* f : {"rd.csv", "bd.csv", "ablation.csv", "rd_checks.csv", "config.txt"}) {
    SCOPED_TRACE(f);
    ASSERT_TRUE(fs::exists(path(std::string("r1/") + f)));
    if (std::string(f) == "config.txt") continue;  // records jobs
    EXPECT_EQ(read_text(path(std::string("r1/") + f)), read_text(path(std::string("r2/") + f)));
  }
  const auto pts = eval::parse_rd_csv(read_text(path("r1/rd.csv")));
  EXPECT_EQ(pts.size(), 4u * 4u * 2u);  // variants x lambdas x seeds
  EXPECT_EQ(eval::curve_points(pts, "base+cadr+csa@s6").size(), 4u);
  const std::string ab = read_text(path("r1/ablation.csv"));
  EXPECT_NE(ab.find("base+cadr[relative],base,"), std::string::npos) << ab;
  // Rerun in place reuses every run and rewrites the same bytes.
  const std::string before = read_text(path("r1/bd.csv"));
  ASSERT_EQ(run(args + " --out r1"), 0) << err();
  EXPECT_EQ(read_text(path("r1/bd.csv")), before);
  EXPECT_NE(err().find("(reused)"), std::string::npos);
}

}  // namespace
}  // namespace realcam::app
