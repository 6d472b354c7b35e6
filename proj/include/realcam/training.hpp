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

// Joint rate-distortion training: L = lambda * D + R with
// D = scale * MSE(recon, target) and R the estimated bits per pixel of the
// noisy latent y + u, u ~ U(-1/2, 1/2).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "realcam/autodiff.hpp"
#include "realcam/bitstream.hpp"
#include "realcam/checkpoint.hpp"
#include "realcam/codec.hpp"
#include "realcam/config.hpp"
#include "realcam/dataset.hpp"
#include "realcam/entropy.hpp"
#include "realcam/model.hpp"
#include "realcam/rng.hpp"

namespace realcam::train {

using model::ModelConfig;

inline constexpr double kDistortionScale = 255.0 * 255.0;

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct RdTerms {
  ad::Var<T> loss, distortion, rate;
};

// rate_bits is the total over the batch; pixels the number of RGB pixels
// it was spent on.
template <class T>
RdTerms<T> rd_loss(ad::Var<T> recon, ad::Var<T> target, ad::Var<T> rate_bits, double lambda, double pixels,
                   double scale = kDistortionScale) {
  if (recon.shape() != target.shape()) {
    throw ShapeError("rd_loss: recon " + shape_str(recon.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (!(lambda > 0) || !(pixels > 0)) throw ConfigError("rd_loss: lambda and pixel count must be positive");
  RdTerms<T> t;
  t.distortion = ad::scale(ad::mse(recon, target), scale);
  t.rate = ad::scale(rate_bits, 1.0 / pixels);
  t.loss = ad::add(ad::scale(t.distortion, lambda), t.rate);
  return t;
}

inline double rd_value(double lambda, double mse, double bpp, double scale = kDistortionScale) {
  return lambda * scale * mse + bpp;
}

// ---------------------------------------------------------------------------
// Optimiser

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<Tensor<float>> m, v;

  void init(const ParamStore& ps) {
    m.clear();
    v.clear();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m.emplace_back(ps.tensor(i).shape());
      v.emplace_back(ps.tensor(i).shape());
    }
    step = 0;
  }
};

inline void adam_step(ParamStore& ps, const std::vector<Tensor<float>>& grads, AdamState& st, double lr) {
  if (st.m.empty()) st.init(ps);
  if (grads.size() != ps.size() || st.m.size() != ps.size()) {
    throw ShapeError("adam: " + std::to_string(grads.size()) + " gradients for " + std::to_string(ps.size()) +
                     " parameters");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (grads[i].shape() != ps.tensor(i).shape() || st.m[i].shape() != ps.tensor(i).shape()) {
      throw ShapeError("adam: gradient of '" + ps.name(i) + "' has shape " + shape_str(grads[i].shape()) +
                       ", parameter " + shape_str(ps.tensor(i).shape()));
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, st.step);
  const double c2 = 1.0 - std::pow(st.beta2, st.step);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor<float>& p = ps.tensor(i);
    Tensor<float>& m = st.m[i];
    Tensor<float>& v = st.v[i];
    const Tensor<float>& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = st.beta1 * m[k] + (1 - st.beta1) * gk;
      const double vk = st.beta2 * v[k] + (1 - st.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      p[k] = static_cast<float>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + st.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Run configuration

struct TrainConfig {
  int steps = 3000;
  int batch = 8;
  int crop = 64;
  double lr = 1e-3;
  std::vector<double> milestones{0.6, 0.85};  // fractions of steps
  double lr_decay = 0.5;
  double clip = 1.0;
  double distortion_scale = kDistortionScale;
  int lambda_index = 0;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (crop < 2 || crop % 2) throw ConfigError("train: crop must be even and >= 2");
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (!(milestones[i] > 0 && milestones[i] < 1)) throw ConfigError("train: milestones must lie in (0,1)");
      if (i && milestones[i] <= milestones[i - 1]) throw ConfigError("train: milestones must be ascending");
    }
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("train: lr_decay must be in (0,1]");
    if (!(clip > 0)) throw ConfigError("train: clip must be > 0");
    if (!(distortion_scale > 0)) throw ConfigError("train: distortion_scale must be > 0");
    entropy::lambda_at(lambda_index);
  }

  double lambda() const { return entropy::lambda_at(lambda_index); }

  std::vector<int> milestone_steps() const {
    std::vector<int> s;
    for (double f : milestones) s.push_back(static_cast<int>(std::lround(f * steps)));
    return s;
  }

  // Learning rate used for step s (0-based).
  double lr_at(int s) const {
    double r = lr;
    for (int m : milestone_steps()) {
      if (s >= m) r *= lr_decay;
    }
    return r;
  }

  std::string to_text() const {
    std::string ms;
    for (double f : milestones) ms += (ms.empty() ? "" : ",") + fmt_double(f);
    return "steps = " + std::to_string(steps) + "\nbatch = " + std::to_string(batch) +
           "\ncrop = " + std::to_string(crop) + "\nlr = " + fmt_double(lr) + "\nmilestones = " + ms +
           "\nlr_decay = " + fmt_double(lr_decay) + "\nclip = " + fmt_double(clip) +
           "\ndistortion_scale = " + fmt_double(distortion_scale) +
           "\nlambda_index = " + std::to_string(lambda_index) + "\nseed = " + std::to_string(seed) + "\n";
  }

  bool set(const std::string& k, const std::string& v) {
    if (k == "steps") steps = static_cast<int>(parse_int(k, v));
    else if (k == "batch") batch = static_cast<int>(parse_int(k, v));
    else if (k == "crop") crop = static_cast<int>(parse_int(k, v));
    else if (k == "lr") lr = parse_double(k, v);
    else if (k == "milestones") {
      milestones.clear();
      for (const auto& f : split_list(v)) milestones.push_back(parse_double(k, f));
    } else if (k == "lr_decay") lr_decay = parse_double(k, v);
    else if (k == "clip") clip = parse_double(k, v);
    else if (k == "distortion_scale") distortion_scale = parse_double(k, v);
    else if (k == "lambda_index") lambda_index = static_cast<int>(parse_int(k, v));
    else if (k == "seed") seed = parse_u64(k, v);
    else return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Batches

struct CropOrigin {
  std::uint32_t capture = 0;
  int m = 0, n = 0;
};

// Random captures from `ids`, even crop origins, all drawn from one
// per-step generator.
inline std::vector<CropOrigin> sample_origins(const sim::Dataset& ds, const std::vector<std::uint32_t>& ids,
                                              int batch, int crop, std::uint64_t seed) {
  if (ids.empty()) throw ConfigError("train: no training captures");
  const int H = ds.config.height, W = ds.config.width;
  if (crop > H || crop > W) {
    throw ConfigError("train: crop " + std::to_string(crop) + " exceeds capture " + std::to_string(H) + "x" +
                      std::to_string(W));
  }
  Rng rng(seed);
  std::vector<CropOrigin> o(static_cast<std::size_t>(batch));
  for (auto& c : o) {
    c.capture = ids[rng.below(ids.size())];
    c.m = 2 * static_cast<int>(rng.below(static_cast<std::uint64_t>((H - crop) / 2 + 1)));
    c.n = 2 * static_cast<int>(rng.below(static_cast<std::uint64_t>((W - crop) / 2 + 1)));
  }
  return o;
}

inline codec::Batch assemble(const sim::Dataset& ds, const ModelConfig& cfg, const std::vector<CropOrigin>& o,
                             int crop, codec::GlobalCache& globals) {
  codec::Batch b = codec::make_batch(cfg, static_cast<int>(o.size()), crop, crop);
  for (std::size_t i = 0; i < o.size(); ++i) {
    const auto& rec = ds.at(o[i].capture);
    codec::fill_slot(b, static_cast<int>(i), cfg, rec, globals.get(rec), o[i].m, o[i].n);
  }
  return b;
}

// ---------------------------------------------------------------------------
// One step

struct StepStats {
  int step = 0;
  double loss = 0, distortion = 0, bpp = 0, mse = 0, lr = 0, grad_norm = 0;
};

struct Gradients {
  std::vector<Tensor<float>> g;
  double norm = 0;
};

// Forward + backward on one batch. Throws NonFiniteError naming the op.
inline StepStats forward_backward(const ModelConfig& cfg, const ParamStore& ps, const codec::Batch& b,
                                  double lambda, double scale, std::uint64_t noise_seed, Gradients& out) {
  ad::Tape<float> tape;
  const model::Bound<float> P(tape, ps, true);
  const auto in = model::bind_inputs(tape, cfg, b.in);
  const auto y = model::encode(cfg, P, in.x, in.coords, in.global);
  const auto yt = ad::add(y, tape.constant(entropy::uniform_noise(y.shape(), noise_seed)));
  const auto recon = model::decode(cfg, P, yt);
  const auto bits = entropy::gaussian_rate(yt, P["ent.mu"], P["ent.log_sigma"]);
  const double pixels = static_cast<double>(b.target.dim(0)) * b.target.dim(2) * b.target.dim(3);
  const auto t = rd_loss(recon, tape.constant(b.target), bits, lambda, pixels, scale);
  tape.backward(t.loss);
  StepStats s;
  s.loss = t.loss.value()[0];
  s.distortion = t.distortion.value()[0];
  s.bpp = t.rate.value()[0];
  s.mse = s.distortion / scale;
  out.g.clear();
  double sq = 0;
  for (const auto& name : P.names()) {
    out.g.push_back(tape.grad(P[name]));
    for (float v : out.g.back().vec()) sq += static_cast<double>(v) * v;
  }
  out.norm = std::sqrt(sq);
  if (!std::isfinite(out.norm)) throw NonFiniteError("backward: non-finite gradient norm");
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int step, std::string component, std::string checkpoint)
      : Error("training diverged at step " + std::to_string(step) + " in " + component +
              (checkpoint.empty() ? "" : "; last good checkpoint " + checkpoint)),
        step_(step),
        component_(std::move(component)) {}
  int step() const { return step_; }
  const std::string& component() const { return component_; }

 private:
  int step_;
  std::string component_;
};

struct TrainResult {
  ParamStore params;
  std::vector<StepStats> log;
  std::vector<std::uint8_t> nonzero_grad;  // per parameter: seen a nonzero gradient
  double seconds = 0;
};

struct TrainOptions {
  std::string out_dir;                                // empty: no files written
  std::function<void(const StepStats&)> progress;     // called every step
  ParamStore* init = nullptr;                         // start here instead of init_params
};

inline std::string log_line(const StepStats& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["loss"] = s.loss;
  j["D"] = s.distortion;
  j["R_bpp"] = s.bpp;
  j["mse"] = s.mse;
  j["lr"] = s.lr;
  j["grad_norm"] = s.grad_norm;
  return j.dump();
}

inline TrainResult train(const sim::Dataset& ds, const ModelConfig& cfg, const TrainConfig& tc,
                         const TrainOptions& opt = {}) {
  cfg.validate();
  tc.validate();
  cfg.validate_crop(tc.crop, tc.crop);
  const auto ids = ds.train_ids();
  if (ids.empty()) throw ConfigError("train: dataset has no training captures");

  namespace fs = std::filesystem;
  std::ofstream log;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    log.open(fs::path(opt.out_dir) / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot write " + (fs::path(opt.out_dir) / "train_log.jsonl").string());
  }
  auto save = [&](const ParamStore& ps, const std::string& file) {
    if (opt.out_dir.empty()) return std::string();
    const std::string path = (fs::path(opt.out_dir) / file).string();
    save_checkpoint(path, Checkpoint{codec::checkpoint_text(cfg, tc.lambda_index), ps});
    return path;
  };

  TrainResult r;
  r.params = opt.init ? *opt.init : model::init_params(cfg, tc.seed);
  model::check_params(cfg, r.params);
  r.nonzero_grad.assign(r.params.size(), 0);
  AdamState adam;
  adam.init(r.params);
  codec::GlobalCache globals(cfg.global_size);
  const auto milestones = tc.milestone_steps();
  const double lambda = tc.lambda();
  Gradients g;
  const auto t0 = std::chrono::steady_clock::now();

  for (int step = 0; step < tc.steps; ++step) {
    const std::uint64_t sseed = derive_seed(tc.seed, 0x5eed0000ull + static_cast<std::uint64_t>(step));
    const auto origins = sample_origins(ds, ids, tc.batch, tc.crop, derive_seed(sseed, 1));
    const codec::Batch b = assemble(ds, cfg, origins, tc.crop, globals);
    StepStats s;
    try {
      s = forward_backward(cfg, r.params, b, lambda, tc.distortion_scale, derive_seed(sseed, 2), g);
      if (!std::isfinite(s.loss)) throw NonFiniteError("loss: non-finite value");
    } catch (const NonFiniteError& e) {
      throw TrainingDiverged(step, e.what(), save(r.params, "last_good.rcpt"));
    }
    s.step = step;
    s.lr = tc.lr_at(step);
    s.grad_norm = g.norm;
    if (g.norm > tc.clip) {
      const float k = static_cast<float>(tc.clip / g.norm);
      for (auto& t : g.g) {
        for (float& v : t.vec()) v *= k;
      }
    }
    for (std::size_t i = 0; i < g.g.size(); ++i) {
      if (r.nonzero_grad[i]) continue;
      for (float v : g.g[i].vec()) {
        if (v != 0.0f) {
          r.nonzero_grad[i] = 1;
          break;
        }
      }
    }
    const ParamStore before = r.params;
    adam_step(r.params, g.g, adam, s.lr);
    for (std::size_t i = 0; i < r.params.size(); ++i) {
      const auto& v = r.params.tensor(i).vec();
      if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
        throw TrainingDiverged(step, "adam update of '" + r.params.name(i) + "'", save(before, "last_good.rcpt"));
      }
    }
    r.log.push_back(s);
    if (log) log << log_line(s) << '\n';
    if (opt.progress) opt.progress(s);
    for (int m : milestones) {
      if (step + 1 == m) save(r.params, "step" + std::to_string(m) + ".rcpt");
    }
  }
  save(r.params, "final.rcpt");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace realcam::train
