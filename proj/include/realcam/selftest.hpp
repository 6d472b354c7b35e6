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

// Self-checks behind `realcam selftest` and the acceptance suite: the
// gradient suite (op catalog + tiny end-to-end model), codec conformance,
// metric oracles. Each check yields one line with a measured value.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "realcam/gradcheck.hpp"
#include "realcam/metrics.hpp"
#include "realcam/model.hpp"
#include "realcam/oracles.hpp"
#include "realcam/range_coder.hpp"
#include "realcam/training.hpp"

namespace realcam::check {

struct Line {
  std::string name;
  bool pass = false;
  double value = 0;
  std::string detail;
};

struct Report {
  std::vector<Line> lines;
  double seconds = 0;

  bool ok() const {
    return std::all_of(lines.begin(), lines.end(), [](const Line& l) { return l.pass; });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> f;
    for (const auto& l : lines) {
      if (!l.pass) f.push_back(l.name);
    }
    return f;
  }
};

inline std::string sci(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3e", v);
  return b;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Gradients

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;
inline constexpr int kOpTrials = 10;

inline Report op_gradients(const std::vector<ad::GradCheckCase>& catalog, int trials = kOpTrials,
                           std::uint64_t seed = 1) {
  Timer t;
  Report r;
  for (const auto& c : catalog) {
    const auto g = ad::grad_check(c, trials, seed);
    r.lines.push_back({"grad " + c.op, g.max_rel_err < kOpTolerance, g.max_rel_err,
                       std::to_string(g.trials) + " trials, max rel err " + sci(g.max_rel_err)});
  }
  r.seconds = t.seconds();
  return r;
}

// Every branch on, smallest sizes.
inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.channels = 4;
  c.latent_channels = 3;
  c.cimc_blocks = 1;
  c.down_stages = 1;
  c.window = 4;
  c.heads = 1;
  c.global_size = 8;
  return c;
}

struct TinyProblem {
  model::ModelConfig cfg = tiny_config();
  model::Inputs in;
  Tensor<float> target, noise;
  double lambda = 0.01;
};

inline Tensor<float> uniform_tensor(const Shape& s, double lo, double hi, std::uint64_t seed) {
  Tensor<float> t(s);
  Rng rng(seed);
  for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline TinyProblem tiny_problem(std::uint64_t seed) {
  TinyProblem p;
  const int n = 2, h = 16, w = 16;
  p.in.x = uniform_tensor({n, 4, h / 2, w / 2}, 0, 1, derive_seed(seed, 1));
  p.in.coords = uniform_tensor({n, 2, h / 2, w / 2}, 0, 1, derive_seed(seed, 2));
  p.in.global = uniform_tensor({n, 4, p.cfg.global_size, p.cfg.global_size}, 0, 1, derive_seed(seed, 3));
  p.target = uniform_tensor({n, 3, h, w}, 0, 1, derive_seed(seed, 4));
  const int s = p.cfg.latent_stride();
  p.noise = entropy::uniform_noise({n, p.cfg.latent_channels, h / s, w / s}, derive_seed(seed, 5));
  return p;
}

// Full RD loss of the tiny model in double, with fixed noise.
inline double tiny_loss(const TinyProblem& p, const ParamStore& ps, ParamStore* grads) {
  ad::Tape<double> tape;
  const model::Bound<double> P(tape, ps, grads != nullptr);
  const auto iv = model::bind_inputs<double>(tape, p.cfg, p.in);
  const auto y = model::encode(p.cfg, P, iv.x, iv.coords, iv.global);
  const auto yt = ad::add(y, tape.constant(p.noise.cast<double>()));
  const auto recon = model::decode(p.cfg, P, yt);
  const auto bits = entropy::gaussian_rate(yt, P["ent.mu"], P["ent.log_sigma"]);
  const double pixels = static_cast<double>(p.target.dim(0)) * p.target.dim(2) * p.target.dim(3);
  const auto t = train::rd_loss(recon, tape.constant(p.target.cast<double>()), bits, p.lambda, pixels);
  if (grads) {
    tape.backward(t.loss);
    for (const auto& name : P.names()) grads->add(name, tape.grad(P[name]).template cast<float>());
  }
  return t.loss.value()[0];
}

// Central differences on every parameter entry. Parameters are float, so
// the step actually taken is measured after rounding.
inline Report model_gradient(std::uint64_t seed = 3) {
  Timer t;
  const TinyProblem p = tiny_problem(seed);
  const ParamStore base = model::init_params(p.cfg, seed);
  ParamStore grads;
  tiny_loss(p, base, &grads);
  const double h = 1e-5;
  double worst = 0;
  std::string worst_name;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& v = base.tensor(i);
    double d2 = 0, a2 = 0, n2 = 0;
    ParamStore q = base;
    for (std::size_t k = 0; k < v.size(); ++k) {
      q.tensor(i)[k] = static_cast<float>(v[k] + h);
      const double up = tiny_loss(p, q, nullptr);
      const double hp = static_cast<double>(q.tensor(i)[k]) - v[k];
      q.tensor(i)[k] = static_cast<float>(v[k] - h);
      const double dn = tiny_loss(p, q, nullptr);
      const double hm = v[k] - static_cast<double>(q.tensor(i)[k]);
      q.tensor(i)[k] = v[k];
      const double num = (up - dn) / (hp + hm);
      const double a = grads.tensor(i)[k];
      d2 += (a - num) * (a - num);
      a2 += a * a;
      n2 += num * num;
    }
    const double rel = std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    if (rel >= worst) {
      worst = rel;
      worst_name = base.name(i);
    }
  }
  Report r;
  r.lines.push_back({"grad tiny-model rd-loss", worst < kModelTolerance, worst,
                     std::to_string(base.size()) + " tensors, " + std::to_string(base.numel()) +
                         " entries, max rel err " + sci(worst) + " (" + worst_name + ")"});
  r.seconds = t.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Codec

// Digest of the reference payload (tables and symbols from Rng(2024)).
inline constexpr std::uint64_t kGoldenPayload = 1741680609381636016ull;

inline Report codec_conformance() {
  Timer t;
  Report r;
  int exact = 0;
  double worst_excess = -1e300, worst_allow = 0;
  bool within = true, repeat = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto tables = oracle::random_tables(rng, 16);
    const auto q = oracle::sample_latent(tables, 25, 25, rng);
    const auto payload = entropy::rc_encode(q, tables);
    exact += entropy::rc_decode(payload, q.shape, tables).symbols == q.symbols;
    repeat = repeat && entropy::rc_encode(q, tables) == payload;
    const double ideal = entropy::table_bits(q, tables);
    const double bits = 8.0 * payload.size();
    const double allow = 0.01 * ideal + 64;
    if (bits - ideal > allow) within = false;
    if (bits - ideal > worst_excess) {
      worst_excess = bits - ideal;
      worst_allow = allow;
    }
  }
  r.lines.push_back({"codec round trips", exact == 100, static_cast<double>(exact), std::to_string(exact) + "/100 bit-exact"});
  r.lines.push_back({"codec rate bound", within, worst_excess,
                     "worst excess " + std::to_string(worst_excess) + " bits (allowed " +
                         std::to_string(worst_allow) + ")"});
  Rng rng(2024);
  const auto tables = oracle::random_tables(rng, 8);
  const auto q = oracle::sample_latent(tables, 16, 16, rng);
  const auto a = entropy::rc_encode(q, tables);
  const std::uint64_t d = fnv1a64(a.data(), a.size());
  r.lines.push_back({"codec byte identity", repeat && d == kGoldenPayload, static_cast<double>(d),
                     std::string(repeat ? "repeat encodes identical" : "repeat encodes differ") +
                         ", reference digest " + std::to_string(d) +
                         (d == kGoldenPayload ? " matches" : " differs")});
  r.seconds = t.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

inline Report metric_oracles() {
  Timer t;
  Report r;
  using sim::RgbImage;
  auto near = [](double a, double b, double tol) { return std::abs(a - b) <= tol; };
  {
    const RgbImage a = oracle::random_image(8, 8, 1);
    const auto same = metrics::psnr(a, a);
    const double p0 = metrics::psnr(RgbImage(4, 4, 0.0f), RgbImage(4, 4, 1.0f)).db;
    const double p20 = metrics::psnr_from_mse(0.01).db;
    const bool ok = same.identical && same.db == 100.0 && near(p0, 0.0, 1e-12) && near(p20, 20.0, 1e-12);
    r.lines.push_back({"psnr closed forms", ok, p20,
                       "identical->" + std::to_string(same.db) + " dB, zeros/ones " + std::to_string(p0) +
                           " dB, mse 0.01 " + std::to_string(p20) + " dB"});
  }
  {
    double worst = 0;
    for (std::uint64_t k = 0; k < 5; ++k) {
      const RgbImage a = oracle::smooth_image(160, 160, 10 + k);
      const RgbImage b = oracle::noisy_copy(a, 0.02 + 0.03 * k, 20 + k);
      worst = std::max(worst, std::abs(metrics::ms_ssim(a, b).raw - oracle::oracle_ms_ssim(a, b)));
    }
    const RgbImage a = oracle::random_image(64, 64, 3);
    const auto same = metrics::ms_ssim(a, a);
    const bool ok = worst < 1e-4 && same.raw == 1.0 && same.db == 100.0 && near(metrics::msssim_db(0.9), 10.0, 1e-12);
    r.lines.push_back({"ms-ssim oracle", ok, worst, "5 pairs 160x160, max |diff| " + sci(worst)});
  }
  {
    const RgbImage a = oracle::random_image(6, 6, 4);
    const double wb = metrics::delta_e(RgbImage(2, 2, 1.0f), RgbImage(2, 2, 0.0f));
    const double grey = metrics::delta_e(RgbImage(3, 3, 0.5f), RgbImage(3, 3, 0.6f));
    const double want = std::abs(oracle::grey_lightness(0.5) - oracle::grey_lightness(0.6));
    const bool ok = metrics::delta_e(a, a) == 0.0 && near(wb, 100.0, 1e-3) && near(grey, want, 1e-3);
    r.lines.push_back({"delta-e examples", ok, grey,
                       "white/black " + std::to_string(wb) + ", grey 0.5/0.6 " + std::to_string(grey) +
                           " (oracle " + std::to_string(want) + ")"});
  }
  {
    const auto p = bd::bd_metric(oracle::analytic(0), oracle::analytic(1)).value;
    const auto q = bd::bd_rate(oracle::analytic(0), oracle::analytic(1)).value;
    const bool ok = near(p, 1.0, 1e-3) && near(q, -29.2893, 0.1) && near(p, oracle::trapezoid_bd_psnr(1.0), 1e-6) &&
                    near(q, oracle::trapezoid_bd_rate(1.0), 1e-4);
    char b[160];
    std::snprintf(b, sizeof b, "BD-PSNR %.6f dB, BD-Rate %.4f%% (trapezoid %.6f, %.4f%%)", p, q,
                  oracle::trapezoid_bd_psnr(1.0), oracle::trapezoid_bd_rate(1.0));
    r.lines.push_back({"bd analytic pair", ok, p, b});
  }
  r.seconds = t.seconds();
  return r;
}

inline void append(Report& into, const Report& r) {
  into.lines.insert(into.lines.end(), r.lines.begin(), r.lines.end());
  into.seconds += r.seconds;
}

// Everything `realcam selftest` runs, in report order.
inline Report run_all(const std::vector<ad::GradCheckCase>& catalog = ad::op_catalog()) {
  Report r = op_gradients(catalog);
  append(r, model_gradient());
  append(r, codec_conformance());
  append(r, metric_oracles());
  return r;
}

}  // namespace realcam::check
