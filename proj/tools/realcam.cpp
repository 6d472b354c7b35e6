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


// realcam: RAW capture -> learned latent -> .rcbs bitstream -> RGB.
//
//   realcam gen-data --out data.rcds --captures 256 --size 256x256 --seed 1
//   realcam train --dataset data.rcds --lambda-index 0 --out runs/full0
//   realcam encode --checkpoint runs/full0/final.rcpt --dataset data.rcds --sample 240 --out x.rcbs
//   realcam decode --checkpoint runs/full0/final.rcpt --in x.rcbs --out x.pfm
//   realcam demo --out report --jobs 2
//
// Any config key can be given as --key=value after the subcommand, e.g.
// --model.channels=16 --train.steps=500.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "realcam/app.hpp"

namespace {

using namespace realcam;

void say(const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); }

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Run config file (key = value lines)");
  sub->add_option_function<std::uint64_t>(
      "--seed",
      [&c](const std::uint64_t& s) {
        c.seed = s;
        c.seed_given = true;
      },
      "Seed for everything stochastic (default: $RC_SEED, else 1)");
  sub->allow_extras();
}

// Leftover `--key=value` arguments become config overrides.
KeyValues overrides(const CLI::App* sub) {
  KeyValues kv;
  for (const auto& a : sub->remaining()) {
    const auto eq = a.find('=');
    if (a.rfind("--", 0) != 0 || eq == std::string::npos || eq == 2) {
      throw ConfigError("unexpected argument '" + a + "' (overrides look like --key=value)");
    }
    kv.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
  }
  return kv;
}

app::RunConfig run_config(const CLI::App* sub, const Common& c, KeyValues extra, bool with_model) {
  KeyValues kv = overrides(sub);
  kv.insert(kv.end(), extra.begin(), extra.end());
  if (c.seed_given) kv.emplace_back("seed", std::to_string(c.seed));
  const char* env = std::getenv("RC_SEED");
  return app::load_run_config(c.config, kv, env ? std::optional<std::string>(env) : std::nullopt, with_model);
}

int print_report(const check::Report& r) {
  for (const auto& l : r.lines) std::printf("%s %-34s %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.detail.c_str());
  const auto f = r.failures();
  std::printf("%zu checks, %zu failed, %.1f s\n", r.lines.size(), f.size(), r.seconds);
  for (const auto& n : f) std::printf("failed: %s\n", n.c_str());
  return r.ok() ? app::kOk : app::kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"RealCam RAW-to-RGB learned codec"};
  cli.require_subcommand(1);
  Common common;

  std::string out, dataset, checkpoint, in, raw, split = "eval", variant = "model", anchor, method, rd, size, axes;
  int captures = 0, lambda_index = -1, sample = -1, crop = 0, seeds = 0, jobs = 0;

  auto* gen = cli.add_subcommand("gen-data", "Build a synthetic RAW/RGB dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Dataset file to write")->required();
  gen->add_option("--captures", captures, "Number of captures");
  gen->add_option("--size", size, "Capture size HxW");

  auto* train = cli.add_subcommand("train", "Train one model at one lambda");
  add_common(train, common);
  train->add_option("--dataset", dataset, "Dataset file")->required();
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--lambda-index", lambda_index, "Index into the lambda grid (0..3)");

  auto* ablate = cli.add_subcommand("ablate", "Train and compare cumulative ablation variants");
  add_common(ablate, common);
  ablate->add_option("--dataset", dataset, "Dataset file")->required();
  ablate->add_option("--out", out, "Report directory")->required();
  ablate->add_option("--axes", axes, "Comma list from cadr,coord,csa,gft,lft");
  ablate->add_option("--seeds", seeds, "Number of training seeds");
  ablate->add_option("--jobs", jobs, "Concurrent training runs");

  auto* enc = cli.add_subcommand("encode", "Encode a capture to .rcbs");
  add_common(enc, common);
  enc->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  enc->add_option("--dataset", dataset, "Dataset file (with --sample)");
  enc->add_option("--sample", sample, "Capture id in the dataset");
  enc->add_option("--raw", raw, "16-bit PGM Bayer mosaic (RGGB)");
  enc->add_option("--out", out, "Bitstream file")->required();
  enc->add_option("--crop", crop, "Tile size (default eval.crop)");

  auto* dec = cli.add_subcommand("decode", "Decode .rcbs to an RGB image (.pfm exact, else 8-bit .ppm)");
  add_common(dec, common);
  dec->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  dec->add_option("--in", in, "Bitstream file")->required();
  dec->add_option("--out", out, "Image file")->required();

  auto* ev = cli.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--dataset", dataset, "Dataset file")->required();
  ev->add_option("--split", split, "eval, train or all");
  ev->add_option("--variant", variant, "Label for the RD row");
  ev->add_option("--crop", crop, "Tile size (default eval.crop)");
  ev->add_option("--out", out, "RD csv to write");

  auto* bdr = cli.add_subcommand("bd-report", "BD-rate/PSNR/MS-SSIM/dE of RD curves against an anchor");
  add_common(bdr, common);
  bdr->add_option("--rd", rd, "RD csv (from eval, ablate or demo)")->required();
  bdr->add_option("--anchor", anchor, "Anchor variant (default eval.anchor)");
  bdr->add_option("--method", method, "cubic or pchip");
  bdr->add_option("--out", out, "BD csv to write")->required();

  auto* demo = cli.add_subcommand("demo", "End to end: data, all variants at every lambda, RD/BD/ablation tables");
  add_common(demo, common);
  demo->add_option("--dataset", dataset, "Existing dataset (default: generate into the report)");
  demo->add_option("--out", out, "Report directory")->required();
  demo->add_option("--jobs", jobs, "Concurrent training runs");

  auto* self = cli.add_subcommand("selftest", "Gradient, codec and metric checks");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return app::kConfigExit;
  }

  try {
    if (*self) return print_report(check::run_all());

    KeyValues extra;
    if (captures) extra.emplace_back("data.captures", std::to_string(captures));
    if (!size.empty()) {
      const auto x = size.find('x');
      if (x == std::string::npos) throw ConfigError("--size must look like HxW, got '" + size + "'");
      extra.emplace_back("data.height", size.substr(0, x));
      extra.emplace_back("data.width", size.substr(x + 1));
    }
    if (lambda_index >= 0) extra.emplace_back("train.lambda_index", std::to_string(lambda_index));
    if (!axes.empty()) extra.emplace_back("ablate.axes", axes);
    if (seeds) extra.emplace_back("ablate.seeds", std::to_string(seeds));
    if (jobs) extra.emplace_back("jobs", std::to_string(jobs));
    if (!anchor.empty()) extra.emplace_back("eval.anchor", anchor);
    if (!method.empty()) extra.emplace_back("eval.bd_method", method);
    if (crop) extra.emplace_back("eval.crop", std::to_string(crop));

    CLI::App* sub = cli.get_subcommands().front();
    // encode/decode/eval/bd-report take the model from the checkpoint.
    const bool with_model = *gen || *train || *ablate || *demo;
    const app::RunConfig rc = run_config(sub, common, extra, with_model);

    if (*gen) {
      app::gen_data(rc, out, say);
    } else if (*train) {
      const auto s = app::train_cmd(rc, dataset, out, say);
      say("wrote " + s.checkpoint);
    } else if (*ablate) {
      app::ablate_cmd(rc, dataset, out, say);
      say("wrote " + out + "/{rd,rd_checks,bd,ablation}.csv");
    } else if (*enc) {
      const auto s = app::encode_cmd(checkpoint, dataset, sample, raw, rc.eval_crop, out);
      std::printf("bpp %.6f bits %llu tiles %zu encode_ms %.1f\n", s.bpp, static_cast<unsigned long long>(s.bits),
                  s.tiles, 1e3 * s.seconds);
      if (s.clamped) say("warning: " + std::to_string(s.clamped) + " latent symbols clamped to the coder support");
    } else if (*dec) {
      const auto im = app::decode_cmd(checkpoint, in, out);
      say("decoded " + std::to_string(im.height) + "x" + std::to_string(im.width) + " to " + out);
    } else if (*ev) {
      const auto p = app::eval_cmd(checkpoint, dataset, split, rc.eval_crop, variant, out, say);
      std::printf("bpp %.6f psnr_db %.4f msssim_db %.4f delta_e %.4f\n", p.bpp, p.psnr, p.msssim_db, p.delta_e);
    } else if (*bdr) {
      const auto rep = app::bd_report_cmd(rd, rc.anchor, rc.bd_method, out);
      say("wrote " + std::to_string(rep.rows.size()) + " rows to " + out);
    } else if (*demo) {
      const auto o = app::demo_cmd(rc, dataset, out, say);
      for (const auto& r : o.ablation) {
        say(r.variant + ": BD-PSNR " + eval::num(r.bd_psnr) + " dB, delta vs previous " + eval::num(r.delta_prev));
      }
    }
    return app::kOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return app::exit_code(e);
  }
}
