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

#pragma once

// Experiment plumbing shared by the CLI and the acceptance suite: ablation
// variants, per-run directories with reuse keys, RD/BD/ablation tables.
//
// Run directory: <root>/<variant>/seed<S>/lambda<k>/ holding final.rcpt,
// train_log.jsonl and key.txt. A run is reused only when key.txt matches.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "realcam/codec.hpp"
#include "realcam/evaluate.hpp"
#include "realcam/training.hpp"

namespace realcam::exp {

using model::ModelConfig;

// Bumped whenever training numerics change, so stale runs are not reused.
inline constexpr int kRunFormat = 1;

struct Variant {
  std::string name;
  ModelConfig cfg;
};

inline const std::vector<std::string>& known_axes() {
  static const std::vector<std::string> a{"cadr", "coord", "csa", "gft", "lft"};
  return a;
}

// Cumulative toggles on top of Base in the order cadr, csa, gft, lft.
// "coord" adds CADR variants with the other coordinate modes.
inline std::vector<Variant> ablation_variants(const ModelConfig& full, const std::vector<std::string>& axes) {
  std::set<std::string> ax;
  for (const auto& a : axes) {
    if (std::find(known_axes().begin(), known_axes().end(), a) == known_axes().end()) {
      throw ConfigError("ablate: unknown axis '" + a + "' (expected cadr,coord,csa,gft,lft)");
    }
    ax.insert(a);
  }
  if (ax.count("coord") && !ax.count("cadr")) throw ConfigError("ablate: axis 'coord' needs 'cadr'");
  ModelConfig c = full;
  c.use_cadr = c.use_csa = c.use_gft = c.use_lft = false;
  if (c.coord_mode == model::CoordMode::none) c.coord_mode = model::CoordMode::absolute;
  std::vector<Variant> v{{"base", c}};
  std::string name = "base";
  for (const char* a : {"cadr", "csa", "gft", "lft"}) {
    if (!ax.count(a)) continue;
    std::string k = a;
    if (k == "cadr") c.use_cadr = true;
    if (k == "csa") c.use_csa = true;
    if (k == "gft") c.use_gft = true;
    if (k == "lft") c.use_lft = true;
    name += "+" + k;
    v.push_back({name, c});
  }
  if (ax.count("coord")) {
    ModelConfig b = v.front().cfg;
    b.use_cadr = true;
    for (auto mode : {model::CoordMode::absolute, model::CoordMode::relative}) {
      if (mode == c.coord_mode) continue;
      b.coord_mode = mode;
      v.push_back({"base+cadr[" + model::coord_mode_name(mode) + "]", b});
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Runs

struct RunSpec {
  std::string variant;
  ModelConfig cfg;
  train::TrainConfig tc;
};

inline std::string run_key(const sim::Dataset& ds, const RunSpec& r) {
  std::string text = "run_format = " + std::to_string(kRunFormat) + "\n";
  for (const auto& [k, v] : ds.manifest) text += "dataset." + k + " = " + v + "\n";
  text += r.cfg.to_text() + r.tc.to_text();
  return text;
}

inline std::string run_dir(const std::string& root, const RunSpec& r) {
  return (std::filesystem::path(root) / r.variant / ("seed" + std::to_string(r.tc.seed)) /
          ("lambda" + std::to_string(r.tc.lambda_index)))
      .string();
}

struct RunOutcome {
  codec::Model model;
  bool reused = false;
  double train_seconds = 0;
};

using Progress = std::function<void(const std::string&)>;

// Trains the run into its directory, or loads it when a finished run with
// the same key is already there and `reuse` is set.
inline RunOutcome train_or_load(const sim::Dataset& ds, const RunSpec& r, const std::string& root, bool reuse,
                                const Progress& progress = {}) {
  namespace fs = std::filesystem;
  const std::string dir = run_dir(root, r);
  const std::string key = run_key(ds, r);
  const fs::path keyf = fs::path(dir) / "key.txt", ck = fs::path(dir) / "final.rcpt";
  const fs::path secf = fs::path(dir) / "train_seconds.txt";
  RunOutcome out;
  if (reuse && fs::exists(keyf) && fs::exists(ck) && read_text(keyf.string()) == key) {
    out.model = codec::load_model(ck.string());
    out.reused = true;
    if (fs::exists(secf)) out.train_seconds = std::stod(read_text(secf.string()));
    return out;
  }
  if (fs::exists(keyf)) fs::remove(keyf);
  train::TrainOptions opt;
  opt.out_dir = dir;
  const std::string label = r.variant + " seed " + std::to_string(r.tc.seed) + " lambda " +
                            std::to_string(r.tc.lambda_index);
  if (progress) {
    opt.progress = [&](const train::StepStats& s) {
      if ((s.step + 1) % 500 == 0 || s.step + 1 == r.tc.steps) {
        char b[160];
        std::snprintf(b, sizeof b, "%s: step %d/%d loss %.4f D %.3f R %.4f", label.c_str(), s.step + 1,
                      r.tc.steps, s.loss, s.distortion, s.bpp);
        progress(b);
      }
    };
  }
  const train::TrainResult res = train::train(ds, r.cfg, r.tc, opt);
  out.model = codec::make_model(r.cfg, res.params, r.tc.lambda_index);
  out.train_seconds = res.seconds;
  write_text(secf.string(), fmt_double(res.seconds) + "\n");
  write_text(keyf.string(), key);  // written last: marks the run complete
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  std::vector<Variant> variants;
  train::TrainConfig base;          // lambda_index and seed overridden per run
  std::vector<int> lambdas{0, 1, 2, 3};
  std::vector<std::uint64_t> seeds{1};
  std::string root;
  bool reuse = true;
  int eval_crop = 64;
  int jobs = 1;
};

inline std::string point_label(const std::string& variant, std::uint64_t seed, std::size_t nseeds) {
  return nseeds > 1 ? variant + "@s" + std::to_string(seed) : variant;
}

// Trains and evaluates every (variant, seed, lambda); RD points carry the
// seed in their label when more than one seed runs. Up to `jobs` runs
// train at once; evaluation is sequential and in a fixed order.
inline std::vector<eval::RdPoint> sweep(const sim::Dataset& ds, const SweepSpec& s, const Progress& progress = {}) {
  struct Job {
    RunSpec run;
    RunOutcome out;
    std::exception_ptr error;
  };
  std::vector<Job> jobs;
  for (const auto& v : s.variants) {
    for (std::uint64_t seed : s.seeds) {
      for (int li : s.lambdas) {
        Job j{{v.name, v.cfg, s.base}, {}, nullptr};
        j.run.tc.seed = seed;
        j.run.tc.lambda_index = li;
        j.run.tc.validate();
        jobs.push_back(std::move(j));
      }
    }
  }
  std::mutex mu;
  Progress say;
  if (progress) {
    say = [&](const std::string& m) {
      std::lock_guard<std::mutex> lock(mu);
      progress(m);
    };
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        jobs[i].out = train_or_load(ds, jobs[i].run, s.root, s.reuse, say);
      } catch (...) {
        jobs[i].error = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(s.jobs, static_cast<int>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& j : jobs) {
    if (j.error) std::rethrow_exception(j.error);
  }
  std::vector<eval::RdPoint> pts;
  for (const auto& j : jobs) {
    eval::RdPoint p = eval::evaluate(j.out.model, ds, ds.eval_ids(), s.eval_crop,
                                     point_label(j.run.variant, j.run.tc.seed, s.seeds.size()));
    if (progress) {
      char b[200];
      std::snprintf(b, sizeof b, "%s lambda %d: bpp %.4f psnr %.3f dB msssim %.3f dB dE %.3f%s", p.variant.c_str(),
                    j.run.tc.lambda_index, p.bpp, p.psnr, p.msssim_db, p.delta_e, j.out.reused ? " (reused)" : "");
      progress(b);
    }
    pts.push_back(std::move(p));
  }
  return pts;
}

// BD of every variant against `anchor`, per seed.
inline eval::BdReport sweep_bd(const std::vector<eval::RdPoint>& pts, const SweepSpec& s, const std::string& anchor,
                               bd::BdMethod m = bd::BdMethod::cubic) {
  eval::BdReport rep;
  rep.method = m;
  for (std::uint64_t seed : s.seeds) {
    const std::string a = point_label(anchor, seed, s.seeds.size());
    std::vector<std::string> tests;
    for (const auto& v : s.variants) tests.push_back(point_label(v.name, seed, s.seeds.size()));
    for (auto& r : eval::bd_report(pts, a, tests, m).rows) rep.rows.push_back(std::move(r));
  }
  return rep;
}

struct AblationRow {
  std::string variant;
  double bd_psnr = 0;      // mean over seeds, dB vs anchor
  double bd_rate = 0;      // mean over seeds, percent vs anchor
  double delta_prev = 0;   // bd_psnr minus the previous cumulative row's (base+cadr for coord rows)
  std::vector<double> per_seed;
};

inline std::vector<AblationRow> ablation_rows(const eval::BdReport& rep, const SweepSpec& s, const std::string& anchor) {
  std::vector<AblationRow> rows;
  for (const auto& v : s.variants) {
    AblationRow row;
    row.variant = v.name;
    for (std::uint64_t seed : s.seeds) {
      double p = 0, r = 0;
      if (v.name != anchor) {
        const std::string t = point_label(v.name, seed, s.seeds.size());
        p = rep.get(t, "bd_psnr_db");
        r = rep.get(t, "bd_rate_pct");
      }
      row.per_seed.push_back(p);
      row.bd_psnr += p / static_cast<double>(s.seeds.size());
      row.bd_rate += r / static_cast<double>(s.seeds.size());
    }
    const bool coord_row = v.name.find('[') != std::string::npos;
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
      if (it->variant.find('[') != std::string::npos) continue;
      if (coord_row && it->variant != "base+cadr") continue;
      row.delta_prev = row.bd_psnr - it->bd_psnr;
      break;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& anchor) {
  std::string s = "variant,anchor,bd_psnr_db,bd_rate_pct,delta_vs_previous_db\n";
  for (const auto& r : rows) {
    s += r.variant + "," + anchor + "," + eval::num(r.bd_psnr) + "," + eval::num(r.bd_rate) + "," +
         eval::num(r.delta_prev) + "\n";
  }
  return s;
}

}  // namespace realcam::exp
