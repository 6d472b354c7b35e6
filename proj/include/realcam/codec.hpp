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

// Inference pipeline: checkpoint -> model bundle, capture -> tiled RCBS
// streams -> reconstruction. Training and evaluation share the input
// assembly here so the two paths see identical crops.
//
// A capture is cut into crop_h x crop_w tiles in raster order; each tile is
// one self-contained RCBS stream. An .rcbs file is the tile streams
// back to back.

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "realcam/autodiff.hpp"
#include "realcam/bitstream.hpp"
#include "realcam/checkpoint.hpp"
#include "realcam/dataset.hpp"
#include "realcam/entropy.hpp"
#include "realcam/model.hpp"
#include "realcam/range_coder.hpp"
#include "realcam/raw_sim.hpp"

namespace realcam::codec {

using model::ModelConfig;

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Model bundle

struct Model {
  ModelConfig cfg;
  ParamStore params;
  int lambda_index = 0;
  std::uint64_t id = 0;
  entropy::ChannelModel channel;
  std::vector<entropy::CdfTable> tables;
};

inline Model make_model(const ModelConfig& cfg, ParamStore params, int lambda_index) {
  cfg.validate();
  entropy::lambda_at(lambda_index);
  model::check_params(cfg, params);
  Model m;
  m.cfg = cfg;
  m.params = std::move(params);
  m.lambda_index = lambda_index;
  m.id = model::model_id(cfg, m.params);
  m.channel.mu = m.params.at("ent.mu").vec();
  m.channel.log_sigma = m.params.at("ent.log_sigma").vec();
  m.tables = m.channel.tables();
  return m;
}

// Checkpoint config text: the model config plus the lambda index.
inline std::string checkpoint_text(const ModelConfig& cfg, int lambda_index) {
  return cfg.to_text() + "lambda_index = " + std::to_string(lambda_index) + "\n";
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
  ModelConfig cfg;
  int lambda_index = -1;
  for (const auto& [k, v] : parse_key_values(ck.config_text, "checkpoint config")) {
    if (k == "lambda_index") {
      lambda_index = static_cast<int>(parse_int(k, v));
    } else if (!cfg.set(k, v)) {
      throw ConfigError("checkpoint config: unknown key '" + k + "'");
    }
  }
  if (lambda_index < 0) throw ConfigError("checkpoint config: missing lambda_index");
  return make_model(cfg, ck.params, lambda_index);
}

inline Checkpoint to_checkpoint(const Model& m) { return {checkpoint_text(m.cfg, m.lambda_index), m.params}; }

inline Model load_model(const std::string& path) { return model_from_checkpoint(load_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Input assembly

// Area-downsampled full captures for the global prior, computed once each.
class GlobalCache {
 public:
  explicit GlobalCache(int size) : size_(size) {}

  const Tensor<float>& get(const sim::CaptureRecord& rec) {
    auto it = cache_.find(rec.id);
    if (it == cache_.end()) it = cache_.emplace(rec.id, sim::global_input(rec.raw, size_)).first;
    return it->second;
  }

 private:
  int size_;
  std::map<std::uint32_t, Tensor<float>> cache_;
};

struct Batch {
  model::Inputs in;
  Tensor<float> target;  // [N,3,h,w]
};

inline Batch make_batch(const ModelConfig& cfg, int n, int h, int w) {
  cfg.validate_crop(h, w);
  Batch b;
  b.in.x = Tensor<float>(Shape{n, 4, h / 2, w / 2});
  b.in.coords = Tensor<float>(Shape{n, 2, h / 2, w / 2});
  b.in.global = Tensor<float>(Shape{n, 4, cfg.global_size, cfg.global_size});
  b.target = Tensor<float>(Shape{n, 3, h, w});
  return b;
}

// Writes the crop of `rec` at RAW origin (m, n0) into batch slot `slot`.
inline void fill_slot(Batch& b, int slot, const ModelConfig& cfg, const sim::CaptureRecord& rec,
                      const Tensor<float>& global, int m, int n0) {
  const int h = b.target.dim(2), w = b.target.dim(3);
  const int H = rec.raw.height, W = rec.raw.width;
  if (m < 0 || n0 < 0 || m % 2 || n0 % 2 || m + h > H || n0 + w > W) {
    throw ShapeError("crop origin (" + std::to_string(m) + "," + std::to_string(n0) + ") of " +
                     std::to_string(h) + "x" + std::to_string(w) + " invalid for capture " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const int hh = h / 2, hw = w / 2;
  const std::size_t plane = static_cast<std::size_t>(hh) * hw;
  float* x = b.in.x.data() + slot * 4 * plane;
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < hh; ++i) {
      for (int j = 0; j < hw; ++j) x[k * plane + i * hw + j] = rec.raw.at(m + 2 * i + k / 2, n0 + 2 * j + k % 2);
    }
  }
  float* c = b.in.coords.data() + slot * 2 * plane;
  for (int i = 0; i < hh; ++i) {
    for (int j = 0; j < hw; ++j) {
      double cy = 0, cx = 0;
      if (cfg.coord_mode == model::CoordMode::absolute) {
        cy = sim::absolute_coord(i, m, H);
        cx = sim::absolute_coord(j, n0, W);
      } else if (cfg.coord_mode == model::CoordMode::relative) {
        cy = sim::relative_coord(i, h);
        cx = sim::relative_coord(j, w);
      }
      c[i * hw + j] = static_cast<float>(cy);
      c[plane + i * hw + j] = static_cast<float>(cx);
    }
  }
  if (global.shape() != Shape{4, cfg.global_size, cfg.global_size}) {
    throw ShapeError("global input " + shape_str(global.shape()) + " does not match global_size " +
                     std::to_string(cfg.global_size));
  }
  std::copy(global.vec().begin(), global.vec().end(), b.in.global.data() + slot * global.size());
  if (rec.target.v.empty()) return;  // encode-only input, no reference RGB
  if (rec.target.height != H || rec.target.width != W) throw ShapeError("capture target does not match its RAW dims");
  const std::size_t tp = static_cast<std::size_t>(h) * w;
  float* t = b.target.data() + slot * 3 * tp;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) t[ch * tp + y * w + xx] = rec.target.at(m + y, n0 + xx, ch);
    }
  }
}

struct TileGrid {
  int raw_h = 0, raw_w = 0, crop_h = 0, crop_w = 0;
  int rows() const { return raw_h / crop_h; }
  int cols() const { return raw_w / crop_w; }
  int count() const { return rows() * cols(); }
  int origin_y(int t) const { return (t / cols()) * crop_h; }
  int origin_x(int t) const { return (t % cols()) * crop_w; }

  void validate() const {
    if (crop_h <= 0 || crop_w <= 0 || raw_h % crop_h || raw_w % crop_w) {
      throw ShapeError("tile " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                       " does not divide capture " + std::to_string(raw_h) + "x" + std::to_string(raw_w));
    }
  }
};

// ---------------------------------------------------------------------------
// Encode / decode

struct Encoded {
  std::vector<entropy::Bitstream> tiles;
  std::size_t clamped = 0;  // latent symbols clipped into the coder support

  std::uint64_t total_bits() const {
    std::uint64_t b = 0;
    for (const auto& t : tiles) b += t.total_bits();
    return b;
  }
};

// The one bpp accounting: every stream bit including headers, over the
// pixels of the capture.
inline double stream_bpp(const std::vector<entropy::Bitstream>& tiles) {
  if (tiles.empty()) throw ShapeError("bpp: no streams");
  std::uint64_t bits = 0;
  for (const auto& t : tiles) bits += t.total_bits();
  const auto& h = tiles.front().header;
  return static_cast<double>(bits) / (static_cast<double>(h.raw_h) * h.raw_w);
}

inline Encoded encode_capture(const Model& mdl, const sim::CaptureRecord& rec, const Tensor<float>& global,
                              int crop_h, int crop_w) {
  const TileGrid g{rec.raw.height, rec.raw.width, crop_h, crop_w};
  g.validate();
  Batch b = make_batch(mdl.cfg, g.count(), crop_h, crop_w);
  for (int t = 0; t < g.count(); ++t) fill_slot(b, t, mdl.cfg, rec, global, g.origin_y(t), g.origin_x(t));
  ad::Tape<float> tape;
  const model::Bound<float> P(tape, mdl.params, false);
  const auto in = model::bind_inputs(tape, mdl.cfg, b.in);
  const Tensor<float>& y = model::encode(mdl.cfg, P, in.x, in.coords, in.global).value();
  const int c = y.dim(1), lh = y.dim(2), lw = y.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * lh * lw;
  Encoded out;
  for (int t = 0; t < g.count(); ++t) {
    Tensor<float> yt(Shape{c, lh, lw}, std::vector<float>(y.data() + t * per, y.data() + (t + 1) * per));
    const entropy::Quantized q = entropy::quantize(yt, mdl.channel.mu);
    out.clamped += q.clamped;
    entropy::Bitstream bs;
    auto& h = bs.header;
    h.raw_h = static_cast<std::uint16_t>(g.raw_h);
    h.raw_w = static_cast<std::uint16_t>(g.raw_w);
    h.crop_h = static_cast<std::uint16_t>(crop_h);
    h.crop_w = static_cast<std::uint16_t>(crop_w);
    h.latent_c = static_cast<std::uint16_t>(c);
    h.latent_h = static_cast<std::uint16_t>(lh);
    h.latent_w = static_cast<std::uint16_t>(lw);
    h.model_id = mdl.id;
    h.lambda_index = static_cast<std::uint8_t>(mdl.lambda_index);
    bs.payload = entropy::rc_encode(q, mdl.tables);
    out.tiles.push_back(std::move(bs));
  }
  return out;
}

inline std::vector<std::uint8_t> pack_streams(const std::vector<entropy::Bitstream>& tiles) {
  std::vector<std::uint8_t> out;
  for (const auto& t : tiles) {
    const auto b = entropy::serialize(t);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

// Splits concatenated streams using each header's payload bit count.
inline std::vector<entropy::Bitstream> unpack_streams(const std::vector<std::uint8_t>& bytes) {
  std::vector<entropy::Bitstream> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < entropy::kHeaderBytes) {
      // Throws, naming bad magic or the truncated header.
      entropy::deserialize(std::vector<std::uint8_t>(bytes.begin() + pos, bytes.end()));
    }
    ByteReader r(bytes, "rcbs");
    r.seek(pos + entropy::kHeaderBytes - 4);
    const std::size_t len = entropy::kHeaderBytes + r.u32() / 8;
    const std::size_t end = std::min(bytes.size(), pos + len);
    out.push_back(entropy::deserialize(std::vector<std::uint8_t>(bytes.begin() + pos, bytes.begin() + end)));
    pos = end;
  }
  if (out.empty()) throw FormatError("rcbs: empty file");
  return out;
}

inline sim::RgbImage decode_capture(const Model& mdl, const std::vector<entropy::Bitstream>& tiles) {
  if (tiles.empty()) throw FormatError("rcbs: no tile streams");
  const auto& h0 = tiles.front().header;
  for (const auto& t : tiles) {
    if (t.header.model_id != mdl.id) {
      throw ModelMismatchError("stream was encoded by model " + hex64(t.header.model_id) +
                               " but the checkpoint is model " + hex64(mdl.id));
    }
    if (t.header.raw_h != h0.raw_h || t.header.raw_w != h0.raw_w || t.header.crop_h != h0.crop_h ||
        t.header.crop_w != h0.crop_w || t.header.latent_c != h0.latent_c || t.header.latent_h != h0.latent_h ||
        t.header.latent_w != h0.latent_w || t.header.lambda_index != h0.lambda_index) {
      throw FormatError("rcbs: tile headers disagree");
    }
  }
  const TileGrid g{h0.raw_h, h0.raw_w, h0.crop_h, h0.crop_w};
  g.validate();
  if (static_cast<int>(tiles.size()) != g.count()) {
    throw FormatError("rcbs: expected " + std::to_string(g.count()) + " tile streams for a " +
                      std::to_string(g.raw_h) + "x" + std::to_string(g.raw_w) + " capture, got " +
                      std::to_string(tiles.size()));
  }
  const int stride = mdl.cfg.latent_stride();
  if (h0.latent_c != mdl.cfg.latent_channels || h0.latent_h * stride != h0.crop_h ||
      h0.latent_w * stride != h0.crop_w) {
    throw FormatError("rcbs: latent shape does not match the model");
  }
  const Shape ls{h0.latent_c, h0.latent_h, h0.latent_w};
  const std::size_t per = shape_numel(ls);
  Tensor<float> yh(Shape{g.count(), h0.latent_c, h0.latent_h, h0.latent_w});
  for (int t = 0; t < g.count(); ++t) {
    const Tensor<float> y = entropy::dequantize(entropy::rc_decode(tiles[t].payload, ls, mdl.tables), mdl.channel.mu);
    std::copy(y.vec().begin(), y.vec().end(), yh.data() + t * per);
  }
  ad::Tape<float> tape;
  const model::Bound<float> P(tape, mdl.params, false);
  const Tensor<float>& o = model::decode(mdl.cfg, P, tape.constant(std::move(yh))).value();
  sim::RgbImage img(g.raw_h, g.raw_w);
  const int ch = g.crop_h, cw = g.crop_w;
  const std::size_t tp = static_cast<std::size_t>(ch) * cw;
  for (int t = 0; t < g.count(); ++t) {
    const float* src = o.data() + t * 3 * tp;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < ch; ++y) {
        for (int x = 0; x < cw; ++x) {
          img.at(g.origin_y(t) + y, g.origin_x(t) + x, c) = std::clamp(src[c * tp + y * cw + x], 0.0f, 1.0f);
        }
      }
    }
  }
  return img;
}

}  // namespace realcam::codec
