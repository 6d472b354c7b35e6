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

// Synthetic dataset builder and the RCDS container.
//
// Layout (little-endian):
//   "RCDS" | version u8 | record count u32 | manifest offset u64
//   per record: capture id u32 | H u32 | W u32 | 4 tensors
//     tensor: tag u8 ('R' raw, 'T' target, 'V' vignette, 'D' dark) |
//             rank u8 | dims u32 x rank | f32 payload
//   manifest: UTF-8 `key = value` text from the manifest offset to EOF

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "realcam/bytes.hpp"
#include "realcam/config.hpp"
#include "realcam/raw_sim.hpp"
#include "realcam/rng.hpp"

namespace realcam::sim {

inline constexpr std::uint8_t kDatasetVersion = 1;

struct DatasetConfig {
  int captures = 256;
  int height = 256;
  int width = 256;
  std::uint64_t seed = 1;
  double eval_fraction = 0.1;
  FieldRanges ranges{};
  // Camera-wide rendering of the targets; exposure is set per capture.
  double gamma = 2.2;
  double s_curve = 3.0;
  double local_contrast = 0.5;
  int local_radius = 4;

  void validate() const {
    if (captures < 1) throw ConfigError("dataset: captures must be >= 1");
    if (height < 2 || width < 2 || height % 2 || width % 2) {
      throw ConfigError("dataset: capture dims must be even and >= 2");
    }
    if (height > 65535 || width > 65535) throw ConfigError("dataset: capture dims must fit 16 bits");
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("dataset: eval fraction must be in [0,1)");
    ToneParams{1.0, gamma, s_curve, local_contrast, local_radius}.validate();
  }

  int eval_count() const { return static_cast<int>(std::floor(eval_fraction * captures + 1e-9)); }
  int train_count() const { return captures - eval_count(); }
};

struct CaptureRecord {
  std::uint32_t id = 0;
  Plane raw;
  RgbImage target;
  Plane vignette;
  Plane dark;
  FieldParams field;
  double exposure = 1.0;

  RawCapture capture() const {
    auto f = std::make_shared<DistortionField>();
    f->params = field;
    f->vignette = vignette;
    f->dark = dark;
    return RawCapture{id, raw, std::move(f)};
  }
};

// Pure function of (config, id): seeded by derive_seed(config.seed, id).
inline CaptureRecord build_capture(const DatasetConfig& cfg, std::uint32_t id) {
  Rng rng(derive_seed(cfg.seed, id));
  const SceneImage scene = generate_scene(cfg.height, cfg.width, rng);
  const FieldParams fp = random_field_params(cfg.height, cfg.width, rng, cfg.ranges);
  auto field = std::make_shared<const DistortionField>(make_field(cfg.height, cfg.width, fp));
  const RawCapture cap = degrade(scene, field, rng.next(), id);
  ToneParams tone{auto_exposure(scene), cfg.gamma, cfg.s_curve, cfg.local_contrast, cfg.local_radius};
  CaptureRecord rec;
  rec.id = id;
  rec.raw = cap.raw;
  rec.target = reference_isp(scene, tone);
  rec.vignette = field->vignette;
  rec.dark = field->dark;
  rec.field = fp;
  rec.exposure = tone.exposure;
  return rec;
}

struct Dataset {
  DatasetConfig config;
  std::vector<CaptureRecord> captures;
  KeyValues manifest;

  // First train_count() captures train, the rest evaluate.
  std::vector<std::uint32_t> train_ids() const {
    std::vector<std::uint32_t> ids;
    for (int i = 0; i < config.train_count(); ++i) ids.push_back(static_cast<std::uint32_t>(i));
    return ids;
  }
  std::vector<std::uint32_t> eval_ids() const {
    std::vector<std::uint32_t> ids;
    for (int i = config.train_count(); i < config.captures; ++i) ids.push_back(static_cast<std::uint32_t>(i));
    return ids;
  }
  const CaptureRecord& at(std::uint32_t id) const { return captures.at(id); }
};

inline std::string manifest_text(const DatasetConfig& cfg, const std::vector<CaptureRecord>& caps) {
  std::ostringstream os;
  os << "format = rcds-" << int(kDatasetVersion) << "\n"
     << "captures = " << cfg.captures << "\n"
     << "height = " << cfg.height << "\n"
     << "width = " << cfg.width << "\n"
     << "seed = " << cfg.seed << "\n"
     << "eval_fraction = " << fmt_double(cfg.eval_fraction) << "\n"
     << "train_count = " << cfg.train_count() << "\n"
     << "eval_count = " << cfg.eval_count() << "\n"
     << "tone.gamma = " << fmt_double(cfg.gamma) << "\n"
     << "tone.s_curve = " << fmt_double(cfg.s_curve) << "\n"
     << "tone.local_contrast = " << fmt_double(cfg.local_contrast) << "\n"
     << "tone.local_radius = " << cfg.local_radius << "\n"
     << "vignette.law = (1+(r/r0)^2)^-2, center (H/2,W/2)\n";
  for (const auto& c : caps) {
    const std::string p = "capture." + std::to_string(c.id) + ".";
    os << p << "r0 = " << fmt_double(c.field.r0) << "\n";
    for (std::size_t k = 0; k < c.field.dark.size(); ++k) {
      const auto& t = c.field.dark[k];
      os << p << "dark" << k << " = " << fmt_double(t.amp) << ' ' << fmt_double(t.fy) << ' '
         << fmt_double(t.fx) << ' ' << fmt_double(t.phase) << "\n";
    }
    os << p << "read_sigma = " << fmt_double(c.field.read_sigma) << "\n"
       << p << "shot_gain = " << fmt_double(c.field.shot_gain) << "\n"
       << p << "exposure = " << fmt_double(c.exposure) << "\n";
  }
  return os.str();
}

inline Dataset build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.captures.reserve(cfg.captures);
  for (int i = 0; i < cfg.captures; ++i) ds.captures.push_back(build_capture(cfg, static_cast<std::uint32_t>(i)));
  ds.manifest = parse_key_values(manifest_text(cfg, ds.captures), "manifest");
  return ds;
}

namespace detail {

inline void put_plane(ByteWriter& w, char tag, const std::vector<float>& v, std::vector<std::uint32_t> dims) {
  w.u8(static_cast<std::uint8_t>(tag));
  w.u8(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) w.u32(d);
  for (float f : v) w.f32(f);
}

inline std::vector<float> get_plane(ByteReader& r, char tag, const std::vector<std::uint32_t>& dims) {
  const auto t = r.u8();
  if (t != static_cast<std::uint8_t>(tag)) {
    throw FormatError(std::string("dataset: expected tensor tag '") + tag + "' at byte offset " +
                      std::to_string(r.pos() - 1));
  }
  const auto rank = r.u8();
  if (rank != dims.size()) throw FormatError("dataset: unexpected rank for tensor tag " + std::string(1, tag));
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const auto d = r.u32();
    if (d != dims[i]) throw FormatError("dataset: tensor dims disagree with record dims");
    n *= d;
  }
  std::vector<float> v(n);
  for (auto& f : v) f = r.f32();
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  ByteWriter w;
  w.str("RCDS");
  w.u8(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.captures.size()));
  const std::size_t off_pos = w.size();
  w.u64(0);
  for (const auto& c : ds.captures) {
    const auto H = static_cast<std::uint32_t>(c.raw.height), W = static_cast<std::uint32_t>(c.raw.width);
    w.u32(c.id);
    w.u32(H);
    w.u32(W);
    detail::put_plane(w, 'R', c.raw.v, {H, W});
    detail::put_plane(w, 'T', c.target.v, {H, W, 3});
    detail::put_plane(w, 'V', c.vignette.v, {H, W});
    detail::put_plane(w, 'D', c.dark.v, {H, W});
  }
  w.patch_u64(off_pos, w.size());
  w.str(manifest_text(ds.config, ds.captures));
  return w.take();
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  write_file(path, serialize_dataset(ds));
}

// Recovers the field parameters of one capture from the manifest.
inline FieldParams manifest_field(const KeyValues& kv, std::uint32_t id) {
  const std::string p = "capture." + std::to_string(id) + ".";
  FieldParams fp;
  fp.r0 = parse_double("r0", kv_lookup(kv, p + "r0"));
  for (std::size_t k = 0; k < fp.dark.size(); ++k) {
    const auto parts = split_list(kv_lookup(kv, p + "dark" + std::to_string(k)), ' ');
    if (parts.size() != 4) throw FormatError("manifest: malformed " + p + "dark" + std::to_string(k));
    fp.dark[k] = {parse_double("amp", parts[0]), parse_double("fy", parts[1]),
                  parse_double("fx", parts[2]), parse_double("phase", parts[3])};
  }
  fp.read_sigma = parse_double("read_sigma", kv_lookup(kv, p + "read_sigma"));
  fp.shot_gain = parse_double("shot_gain", kv_lookup(kv, p + "shot_gain"));
  return fp;
}

inline Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "dataset");
  if (r.str(4) != "RCDS") throw FormatError("dataset: bad magic");
  if (const auto v = r.u8(); v != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(v));
  }
  const auto count = r.u32();
  const auto moff = r.u64();
  if (moff > bytes.size()) throw FormatError("dataset: manifest offset beyond end of file");
  Dataset ds;
  {
    ByteReader mr(bytes.data() + moff, bytes.size() - moff, "manifest");
    const std::string text = mr.str(mr.remaining());
    ds.manifest = parse_key_values(text, "manifest");
  }
  const auto& kv = ds.manifest;
  auto& cfg = ds.config;
  cfg.captures = static_cast<int>(parse_int("captures", kv_lookup(kv, "captures")));
  cfg.height = static_cast<int>(parse_int("height", kv_lookup(kv, "height")));
  cfg.width = static_cast<int>(parse_int("width", kv_lookup(kv, "width")));
  cfg.seed = parse_u64("seed", kv_lookup(kv, "seed"));
  cfg.eval_fraction = parse_double("eval_fraction", kv_lookup(kv, "eval_fraction"));
  cfg.gamma = parse_double("tone.gamma", kv_lookup(kv, "tone.gamma"));
  cfg.s_curve = parse_double("tone.s_curve", kv_lookup(kv, "tone.s_curve"));
  cfg.local_contrast = parse_double("tone.local_contrast", kv_lookup(kv, "tone.local_contrast"));
  cfg.local_radius = static_cast<int>(parse_int("tone.local_radius", kv_lookup(kv, "tone.local_radius")));
  if (static_cast<int>(count) != cfg.captures) throw FormatError("dataset: record count disagrees with manifest");

  ds.captures.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CaptureRecord c;
    c.id = r.u32();
    const auto H = r.u32(), W = r.u32();
    if (H == 0 || W == 0 || H > 65535 || W > 65535) throw FormatError("dataset: bad record dims");
    c.raw = Plane(static_cast<int>(H), static_cast<int>(W));
    c.raw.v = detail::get_plane(r, 'R', {H, W});
    c.target = RgbImage(static_cast<int>(H), static_cast<int>(W));
    c.target.v = detail::get_plane(r, 'T', {H, W, 3});
    c.vignette = Plane(static_cast<int>(H), static_cast<int>(W));
    c.vignette.v = detail::get_plane(r, 'V', {H, W});
    c.dark = Plane(static_cast<int>(H), static_cast<int>(W));
    c.dark.v = detail::get_plane(r, 'D', {H, W});
    c.field = manifest_field(kv, c.id);
    c.exposure = parse_double("exposure", kv_lookup(kv, "capture." + std::to_string(c.id) + ".exposure"));
    ds.captures.push_back(std::move(c));
  }
  if (r.pos() != moff) throw FormatError("dataset: record data does not end at the manifest offset");
  return ds;
}

inline Dataset read_dataset(const std::string& path) { return deserialize_dataset(read_file(path)); }

}  // namespace realcam::sim
