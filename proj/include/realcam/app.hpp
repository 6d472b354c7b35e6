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

// Subcommand bodies behind the `realcam` tool, kept out of main() so the
// tests can drive them directly. Every command validates its inputs before
// it creates a file or directory.
//
// Run config: `key = value` lines with dotted sections (data., model.,
// train., eval., ablate.) plus `seed` and `jobs`. Unknown keys are errors.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "realcam/codec.hpp"
#include "realcam/dataset.hpp"
#include "realcam/evaluate.hpp"
#include "realcam/experiment.hpp"
#include "realcam/selftest.hpp"
#include "realcam/training.hpp"

namespace realcam::app {

namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kFailed = 1, kConfigExit = 2, kIoExit = 3, kMismatchExit = 4 };

inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const ModelMismatchError*>(&e)) return kMismatchExit;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kIoExit;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kConfigExit;
  return kFailed;
}

using Log = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  sim::DatasetConfig data;
  model::ModelConfig model;
  train::TrainConfig train;
  int eval_crop = 64;
  std::string anchor = "base";
  std::vector<int> lambdas{0, 1, 2, 3};
  bd::BdMethod bd_method = bd::BdMethod::cubic;
  std::vector<std::string> axes = exp::known_axes();
  int seeds = 1;  // ablate/demo train seeds seed, seed+1, ...
  int jobs = 1;
  std::uint64_t seed = 1;
  std::vector<std::string> provenance;

  void set(const std::string& k, const std::string& v) {
    const auto dot = k.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
    const std::string key = dot == std::string::npos ? k : k.substr(dot + 1);
    bool ok = true;
    if (k == "seed") {
      seed = parse_u64(k, v);
    } else if (k == "jobs") {
      jobs = static_cast<int>(parse_int(k, v));
    } else if (sec == "data") {
      if (key == "captures") data.captures = static_cast<int>(parse_int(k, v));
      else if (key == "height") data.height = static_cast<int>(parse_int(k, v));
      else if (key == "width") data.width = static_cast<int>(parse_int(k, v));
      else if (key == "eval_fraction") data.eval_fraction = parse_double(k, v);
      else if (key == "gamma") data.gamma = parse_double(k, v);
      else if (key == "s_curve") data.s_curve = parse_double(k, v);
      else if (key == "local_contrast") data.local_contrast = parse_double(k, v);
      else if (key == "local_radius") data.local_radius = static_cast<int>(parse_int(k, v));
      else ok = false;
    } else if (sec == "model") {
      ok = model.set(key, v);
    } else if (sec == "train") {
      // One seed drives everything; see `seed`.
      ok = key != "seed" && train.set(key, v);
    } else if (sec == "eval") {
      if (key == "crop") eval_crop = static_cast<int>(parse_int(k, v));
      else if (key == "anchor") anchor = v;
      else if (key == "lambdas") {
        lambdas.clear();
        for (const auto& s : split_list(v)) lambdas.push_back(static_cast<int>(parse_int(k, s)));
      } else if (key == "bd_method") {
        if (v == "cubic") bd_method = bd::BdMethod::cubic;
        else if (v == "pchip") bd_method = bd::BdMethod::pchip;
        else throw ConfigError(k + ": expected cubic or pchip, got '" + v + "'");
      } else ok = false;
    } else if (sec == "ablate") {
      if (key == "axes") axes = split_list(v);
      else if (key == "seeds") seeds = static_cast<int>(parse_int(k, v));
      else ok = false;
    } else {
      ok = false;
    }
    if (!ok) throw ConfigError("unknown config key '" + k + "'");
  }

  void apply(const KeyValues& kv, const std::string& origin) {
    for (const auto& [k, v] : kv) set(k, v);
    if (!kv.empty()) provenance.push_back(origin);
  }

  std::vector<exp::Variant> variants() const { return exp::ablation_variants(model, axes); }

  std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < seeds; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
    return s;
  }

  // `with_model`: the command builds models from this config (train,
  // ablate, demo), so crops must fit it. Checkpoint-driven commands skip it.
  void validate(bool with_model = true) const {
    sim::DatasetConfig d = data;
    d.seed = seed;
    d.validate();
    model.validate();
    train::TrainConfig t = train;
    t.seed = seed;
    t.validate();
    if (with_model) {
      model.validate_crop(train.crop, train.crop);
      model.validate_crop(eval_crop, eval_crop);
    } else if (eval_crop < 2 || eval_crop % 2) {
      throw ConfigError("eval.crop must be even and >= 2");
    }
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
    if (lambdas.empty()) throw ConfigError("eval.lambdas is empty");
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      entropy::lambda_at(lambdas[i]);
      for (std::size_t j = 0; j < i; ++j) {
        if (lambdas[i] == lambdas[j]) throw ConfigError("eval.lambdas repeats index " + std::to_string(lambdas[i]));
      }
    }
    if (!with_model) return;
    const auto vs = variants();
    if (std::none_of(vs.begin(), vs.end(), [&](const exp::Variant& v) { return v.name == anchor; })) {
      throw ConfigError("eval.anchor '" + anchor + "' is not one of the ablation variants");
    }
  }

  sim::DatasetConfig dataset_config() const {
    sim::DatasetConfig d = data;
    d.seed = seed;
    return d;
  }

  train::TrainConfig train_config() const {
    train::TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  std::string to_text() const {
    std::string s = "# resolved run config";
    for (const auto& p : provenance) s += "\n# from " + p;
    s += "\nseed = " + std::to_string(seed) + "\njobs = " + std::to_string(jobs) + "\n";
    const sim::DatasetConfig d = data;
    s += "data.captures = " + std::to_string(d.captures) + "\ndata.height = " + std::to_string(d.height) +
         "\ndata.width = " + std::to_string(d.width) + "\ndata.eval_fraction = " + fmt_double(d.eval_fraction) +
         "\ndata.gamma = " + fmt_double(d.gamma) + "\ndata.s_curve = " + fmt_double(d.s_curve) +
         "\ndata.local_contrast = " + fmt_double(d.local_contrast) +
         "\ndata.local_radius = " + std::to_string(d.local_radius) + "\n";
    for (const auto& [k, v] : parse_key_values(model.to_text())) s += "model." + k + " = " + v + "\n";
    for (const auto& [k, v] : parse_key_values(train.to_text())) {
      if (k != "seed") s += "train." + k + " = " + v + "\n";
    }
    std::string ls, ax;
    for (int l : lambdas) ls += (ls.empty() ? "" : ",") + std::to_string(l);
    for (const auto& a : axes) ax += (ax.empty() ? "" : ",") + a;
    s += "eval.crop = " + std::to_string(eval_crop) + "\neval.anchor = " + anchor + "\neval.lambdas = " + ls +
         "\neval.bd_method = " + bd::method_name(bd_method) + "\nablate.axes = " + ax +
         "\nablate.seeds = " + std::to_string(seeds) + "\n";
    return s;
  }
};

// Defaults, then RC_SEED, then the file, then overrides in order.
inline RunConfig load_run_config(const std::string& file, const KeyValues& overrides,
                                 std::optional<std::string> env_seed = std::nullopt, bool with_model = true) {
  RunConfig rc;
  if (env_seed && !env_seed->empty()) {
    rc.seed = parse_u64("RC_SEED", *env_seed);
    rc.provenance.push_back("RC_SEED");
  }
  if (!file.empty()) {
    if (!fs::exists(file)) throw IoError("config file not found: " + file);
    rc.apply(parse_key_values(read_text(file), file), file);
  }
  rc.apply(overrides, "command line");
  rc.validate(with_model);
  return rc;
}

// ---------------------------------------------------------------------------
// Image files

// Bayer mosaic as a binary 16-bit PGM (P5, maxval 65535), values / 65535.
inline sim::Plane read_raw_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w < 2 || h < 2 || maxval != 65535) {
    throw FormatError(path + ": expected a 16-bit binary PGM (P5, maxval 65535)");
  }
  if (h % 2 || w % 2) throw FormatError(path + ": mosaic dims must be even");
  in.get();
  std::vector<unsigned char> b(static_cast<std::size_t>(w) * h * 2);
  if (!in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()))) {
    throw FormatError(path + ": truncated pixel data");
  }
  sim::Plane p(h, w);
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = static_cast<float>((b[2 * i] << 8 | b[2 * i + 1]) / 65535.0);
  return p;
}

inline void write_raw_pgm(const std::string& path, const sim::Plane& p) {
  std::string s = "P5\n" + std::to_string(p.width) + " " + std::to_string(p.height) + "\n65535\n";
  for (float v : p.v) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0));
    s.push_back(static_cast<char>(q >> 8));
    s.push_back(static_cast<char>(q & 0xff));
  }
  write_text(path, s);
}

// .pfm keeps the decoded floats exactly; anything else gets 8-bit PPM.
inline void write_image(const std::string& path, const sim::RgbImage& im) {
  std::string s;
  if (fs::path(path).extension() == ".pfm") {
    s = "PF\n" + std::to_string(im.width) + " " + std::to_string(im.height) + "\n-1.0\n";
    for (int y = im.height - 1; y >= 0; --y) {  // PFM rows run bottom to top
      const char* row = reinterpret_cast<const char*>(&im.v[static_cast<std::size_t>(y) * im.width * 3]);
      s.append(row, static_cast<std::size_t>(im.width) * 3 * sizeof(float));
    }
  } else {
    s = "P6\n" + std::to_string(im.width) + " " + std::to_string(im.height) + "\n255\n";
    for (float v : im.v) s.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0)));
  }
  write_text(path, s);
}

inline sim::RgbImage read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  if (magic != "PF" || w < 1 || h < 1 || scale >= 0) throw FormatError(path + ": expected little-endian colour PFM");
  in.get();
  sim::RgbImage im(h, w);
  for (int y = h - 1; y >= 0; --y) {
    char* row = reinterpret_cast<char*>(&im.v[static_cast<std::size_t>(y) * w * 3]);
    if (!in.read(row, static_cast<std::streamsize>(static_cast<std::size_t>(w) * 3 * sizeof(float)))) {
      throw FormatError(path + ": truncated pixel data");
    }
  }
  return im;
}

// ---------------------------------------------------------------------------
// Commands

inline void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path);
}

// Parent of `path` must already exist; outputs never create it implicitly.
inline void require_parent(const std::string& path) {
  if (path.empty()) throw ConfigError("output path is required");
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
}

inline sim::Dataset load_dataset(const std::string& path, const Log& log = {}) {
  require_file(path, "dataset");
  sim::Dataset ds = sim::read_dataset(path);
  if (log) {
    log("dataset " + path + ": " + std::to_string(ds.config.captures) + " captures " +
        std::to_string(ds.config.height) + "x" + std::to_string(ds.config.width) + ", " +
        std::to_string(ds.config.train_count()) + " train / " + std::to_string(ds.config.eval_count()) + " eval");
  }
  return ds;
}

// Crop size against capture dims, before anything is written.
inline void check_fits(const sim::DatasetConfig& d, int train_crop, int eval_crop) {
  if (train_crop > d.height || train_crop > d.width) {
    throw ConfigError("train.crop " + std::to_string(train_crop) + " exceeds the " + std::to_string(d.height) +
                      "x" + std::to_string(d.width) + " captures");
  }
  if (eval_crop > 0) codec::TileGrid{d.height, d.width, eval_crop, eval_crop}.validate();
}

inline void gen_data(const RunConfig& rc, const std::string& out, const Log& log = {}) {
  require_parent(out);
  const sim::DatasetConfig d = rc.dataset_config();
  if (log) log("generating " + std::to_string(d.captures) + " captures of " + std::to_string(d.height) + "x" +
               std::to_string(d.width) + " (seed " + std::to_string(d.seed) + ")");
  sim::write_dataset(out, sim::build_dataset(d));
}

struct TrainSummary {
  std::string checkpoint;
  double seconds = 0;
  double final_loss = 0;
};

inline TrainSummary train_cmd(const RunConfig& rc, const std::string& dataset, const std::string& out_dir,
                              const Log& log = {}) {
  if (out_dir.empty()) throw ConfigError("--out is required");
  const sim::Dataset ds = load_dataset(dataset, log);
  check_fits(ds.config, rc.train.crop, 0);
  if (ds.config.train_count() < 1) throw ConfigError("dataset has no training captures");
  require_parent(out_dir);
  const train::TrainConfig tc = rc.train_config();
  train::TrainOptions opt;
  opt.out_dir = out_dir;
  if (log) {
    opt.progress = [&](const train::StepStats& s) {
      if ((s.step + 1) % 100 == 0 || s.step + 1 == tc.steps) {
        char b[160];
        std::snprintf(b, sizeof b, "step %d/%d loss %.4f D %.3f R %.4f bpp lr %.2e", s.step + 1, tc.steps, s.loss,
                      s.distortion, s.bpp, s.lr);
        log(b);
      }
    };
  }
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "config.txt").string(), rc.to_text());
  const train::TrainResult r = train::train(ds, rc.model, tc, opt);
  return {(fs::path(out_dir) / "final.rcpt").string(), r.seconds, r.log.empty() ? 0.0 : r.log.back().loss};
}

struct EncodeSummary {
  double bpp = 0;
  std::uint64_t bits = 0;
  std::size_t tiles = 0;
  std::size_t clamped = 0;
  double seconds = 0;
};

// Input is either a dataset capture (`sample` >= 0) or a 16-bit PGM mosaic.
inline EncodeSummary encode_cmd(const std::string& checkpoint, const std::string& dataset, int sample,
                                const std::string& raw_path, int crop, const std::string& out) {
  if (dataset.empty() == raw_path.empty()) throw ConfigError("encode: give exactly one of --dataset or --raw");
  if (!dataset.empty() && sample < 0) throw ConfigError("encode: --sample is required with --dataset");
  require_file(checkpoint, "checkpoint");
  require_parent(out);
  const codec::Model m = codec::load_model(checkpoint);
  m.cfg.validate_crop(crop, crop);
  sim::CaptureRecord rec;
  sim::Dataset ds;
  if (!dataset.empty()) {
    ds = load_dataset(dataset);
    if (sample >= ds.config.captures) {
      throw ConfigError("encode: sample " + std::to_string(sample) + " out of range (dataset has " +
                        std::to_string(ds.config.captures) + " captures)");
    }
    rec = ds.at(static_cast<std::uint32_t>(sample));
  } else {
    require_file(raw_path, "raw file");
    rec.raw = read_raw_pgm(raw_path);
  }
  codec::TileGrid{rec.raw.height, rec.raw.width, crop, crop}.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const codec::Encoded e = codec::encode_capture(m, rec, sim::global_input(rec.raw, m.cfg.global_size), crop, crop);
  const auto bytes = codec::pack_streams(e.tiles);
  EncodeSummary s;
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(out, bytes);
  s.bpp = codec::stream_bpp(e.tiles);
  s.bits = e.total_bits();
  s.tiles = e.tiles.size();
  s.clamped = e.clamped;
  return s;
}

inline sim::RgbImage decode_cmd(const std::string& checkpoint, const std::string& in, const std::string& out) {
  require_file(checkpoint, "checkpoint");
  require_file(in, "bitstream");
  require_parent(out);
  const codec::Model m = codec::load_model(checkpoint);
  const sim::RgbImage im = codec::decode_capture(m, codec::unpack_streams(read_file(in)));
  write_image(out, im);
  return im;
}

inline std::vector<std::uint32_t> split_ids(const sim::Dataset& ds, const std::string& split) {
  if (split == "eval") return ds.eval_ids();
  if (split == "train") return ds.train_ids();
  if (split == "all") {
    std::vector<std::uint32_t> ids = ds.train_ids();
    for (auto i : ds.eval_ids()) ids.push_back(i);
    return ids;
  }
  throw ConfigError("split must be eval, train or all, got '" + split + "'");
}

inline eval::RdPoint eval_cmd(const std::string& checkpoint, const std::string& dataset, const std::string& split,
                              int crop, const std::string& variant, const std::string& out, const Log& log = {}) {
  require_file(checkpoint, "checkpoint");
  if (variant.empty() || variant.find(',') != std::string::npos) throw ConfigError("variant name must be non-empty, no commas");
  const codec::Model m = codec::load_model(checkpoint);
  m.cfg.validate_crop(crop, crop);
  const sim::Dataset ds = load_dataset(dataset, log);
  check_fits(ds.config, 0, crop);
  const auto ids = split_ids(ds, split);
  if (ids.empty()) throw ConfigError("split '" + split + "' is empty");
  if (!out.empty()) require_parent(out);
  const eval::RdPoint p = eval::evaluate(m, ds, ids, crop, variant);
  if (!out.empty()) write_text(out, eval::rd_csv({p}));
  return p;
}

inline eval::BdReport bd_report_cmd(const std::string& rd_csv_path, const std::string& anchor, bd::BdMethod method,
                                    const std::string& out) {
  require_file(rd_csv_path, "RD table");
  require_parent(out);
  const auto pts = eval::parse_rd_csv(read_text(rd_csv_path));
  std::vector<std::string> tests;
  for (const auto& p : pts) {
    if (p.variant != anchor && std::find(tests.begin(), tests.end(), p.variant) == tests.end()) tests.push_back(p.variant);
  }
  if (std::none_of(pts.begin(), pts.end(), [&](const eval::RdPoint& p) { return p.variant == anchor; })) {
    throw ConfigError("anchor '" + anchor + "' has no rows in " + rd_csv_path);
  }
  const eval::BdReport rep = eval::bd_report(pts, anchor, tests, method);
  write_text(out, eval::bd_csv(rep));
  return rep;
}

struct SweepOutput {
  std::vector<eval::RdPoint> points;
  eval::BdReport bd;
  std::vector<exp::AblationRow> ablation;
};

inline std::string rd_checks_csv(const std::vector<eval::RdPoint>& pts) {
  std::vector<std::string> names;
  for (const auto& p : pts) {
    if (std::find(names.begin(), names.end(), p.variant) == names.end()) names.push_back(p.variant);
  }
  std::string s = "variant,points,violations\n";
  for (const auto& n : names) {
    const auto c = eval::curve_points(pts, n);
    s += n + "," + std::to_string(c.size()) + "," + std::to_string(eval::rd_violations(c).size()) + "\n";
  }
  return s;
}

// Trains (or reuses) every variant/seed/lambda run under <out>/runs and
// writes rd.csv, bd.csv, ablation.csv and rd_checks.csv into <out>.
inline SweepOutput sweep_cmd(const RunConfig& rc, const sim::Dataset& ds, const std::string& out_dir,
                             const Log& log = {}) {
  check_fits(ds.config, rc.train.crop, rc.eval_crop);
  if (ds.config.train_count() < 1 || ds.config.eval_count() < 1) {
    throw ConfigError("dataset needs both training and evaluation captures");
  }
  exp::SweepSpec s;
  s.variants = rc.variants();
  s.base = rc.train_config();
  s.lambdas = rc.lambdas;
  s.seeds = rc.seed_list();
  s.root = (fs::path(out_dir) / "runs").string();
  s.eval_crop = rc.eval_crop;
  s.jobs = rc.jobs;
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "config.txt").string(), rc.to_text());
  SweepOutput o;
  o.points = exp::sweep(ds, s, log);
  write_text((fs::path(out_dir) / "rd.csv").string(), eval::rd_csv(o.points));
  write_text((fs::path(out_dir) / "rd_checks.csv").string(), rd_checks_csv(o.points));
  if (rc.lambdas.size() >= 4) {
    o.bd = exp::sweep_bd(o.points, s, rc.anchor, rc.bd_method);
    o.ablation = exp::ablation_rows(o.bd, s, rc.anchor);
    write_text((fs::path(out_dir) / "bd.csv").string(), eval::bd_csv(o.bd));
    write_text((fs::path(out_dir) / "ablation.csv").string(), exp::ablation_csv(o.ablation, rc.anchor));
  } else if (log) {
    log("fewer than 4 lambda points: BD and ablation tables skipped");
  }
  return o;
}

inline SweepOutput ablate_cmd(const RunConfig& rc, const std::string& dataset, const std::string& out_dir,
                              const Log& log = {}) {
  if (out_dir.empty()) throw ConfigError("--out is required");
  const sim::Dataset ds = load_dataset(dataset, log);
  require_parent(out_dir);
  return sweep_cmd(rc, ds, out_dir, log);
}

// Full report: dataset (generated into <out>/dataset.rcds unless given),
// RD curves for every variant, BD against the anchor, ablation deltas.
inline SweepOutput demo_cmd(const RunConfig& rc, const std::string& dataset, const std::string& out_dir,
                            const Log& log = {}) {
  if (out_dir.empty()) throw ConfigError("--out is required");
  require_parent(out_dir);
  sim::Dataset ds;
  if (!dataset.empty()) {
    ds = load_dataset(dataset, log);
  } else {
    const sim::DatasetConfig d = rc.dataset_config();
    check_fits(d, rc.train.crop, rc.eval_crop);
    if (d.train_count() < 1 || d.eval_count() < 1) throw ConfigError("dataset needs both training and evaluation captures");
    const std::string path = (fs::path(out_dir) / "dataset.rcds").string();
    fs::create_directories(out_dir);
    if (log) log("generating dataset " + path);
    ds = sim::build_dataset(d);
    sim::write_dataset(path, ds);
  }
  return sweep_cmd(rc, ds, out_dir, log);
}

}  // namespace realcam::app
