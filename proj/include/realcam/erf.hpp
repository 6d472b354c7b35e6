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

// Effective receptive field of a latent unit: |d y / d input| summed over
// channels, normalised to max 1. The architectural bound comes from
// back-projecting an output interval through the layer stack, one axis at
// a time (every layer is square and grid-aligned).

#include <algorithm>
#include <cmath>
#include <vector>

#include "realcam/autodiff.hpp"
#include "realcam/model.hpp"

namespace realcam::erf {

using model::ModelConfig;

struct Stage {
  enum Kind { conv, window, global } kind = conv;
  int k = 1;
  int stride = 1;
  int ws = 0;
};

// Encoder layers from the coordinate map to y, in forward order.
// Pointwise ops (gating, LFT, GFT, relu) do not widen the support. CSA is
// global: its channel branch pools the whole map.
inline std::vector<Stage> coord_path(const ModelConfig& cfg) {
  std::vector<Stage> p;
  p.push_back({Stage::conv, 3, 1, 0});  // enc.cadr.coord
  for (int k = 0; k < cfg.down_stages; ++k) {
    p.push_back({Stage::conv, 3, 2, 0});
    for (int b = 0; b < cfg.blocks_per_stage() && cfg.use_csa; ++b) {
      for (int r = 0; r < 2; ++r) {
        p.push_back({Stage::window, 1, 1, cfg.window});
        p.push_back({Stage::global, 1, 1, 0});
      }
    }
  }
  p.push_back({Stage::conv, 1, 1, 0});  // enc.out
  return p;
}

struct Interval {
  int lo = 0, hi = -1;
  bool contains(int v) const { return v >= lo && v <= hi; }
  int size() const { return hi - lo + 1; }
};

// Input positions along one axis that can reach output positions [lo, hi].
inline Interval back_project(const std::vector<Stage>& path, int in_size, Interval out) {
  std::vector<int> sizes{in_size};
  for (const auto& s : path) {
    const int n = sizes.back();
    sizes.push_back(s.kind == Stage::conv ? (n + 2 * (s.k / 2) - s.k) / s.stride + 1 : n);
  }
  Interval r = out;
  for (int i = static_cast<int>(path.size()) - 1; i >= 0; --i) {
    const Stage& s = path[static_cast<std::size_t>(i)];
    const int n = sizes[static_cast<std::size_t>(i)];
    if (s.kind == Stage::conv) {
      r = {r.lo * s.stride - s.k / 2, r.hi * s.stride - s.k / 2 + s.k - 1};
    } else if (s.kind == Stage::window) {
      r = {(r.lo / s.ws) * s.ws, (r.hi / s.ws + 1) * s.ws - 1};
    } else {
      r = {0, n - 1};
    }
    r.lo = std::max(r.lo, 0);
    r.hi = std::min(r.hi, n - 1);
  }
  return r;
}

// [H,W] map: sum over channels of |g|, scaled to max 1 (all zero stays zero).
inline Tensor<double> magnitude(const Tensor<double>& g) {
  const int c = g.dim(1), h = g.dim(2), w = g.dim(3);
  Tensor<double> m(Shape{h, w});
  for (int k = 0; k < c; ++k) {
    for (int i = 0; i < h * w; ++i) m[static_cast<std::size_t>(i)] += std::abs(g[static_cast<std::size_t>(k) * h * w + i]);
  }
  const double mx = *std::max_element(m.vec().begin(), m.vec().end());
  if (mx > 0) {
    for (double& v : m.vec()) v /= mx;
  }
  return m;
}

struct Maps {
  Tensor<double> crop, coords, global;  // [H,W] each; empty when the branch is off
  Tensor<double> global_features_grad;   // [1,C,h,w] gradient at the map before pooling
  int unit_y = 0, unit_x = 0;            // latent position probed
};

// ERF of sum_c y[0,c,uy,ux] for a single-crop input (N = 1).
inline Maps maps(const ModelConfig& cfg, const ParamStore& ps, const model::Inputs& in, int uy, int ux) {
  if (in.x.dim(0) != 1) throw ShapeError("erf: expects a single crop");
  ad::Tape<double> tape;
  const model::Bound<double> P(tape, ps, false);
  const auto v = model::bind_inputs<double>(tape, cfg, in, true);
  model::Trace<double> tr;
  const auto y = model::encode(cfg, P, v.x, v.coords, v.global, &tr);
  const int c = y.dim(1), lh = y.dim(2), lw = y.dim(3);
  if (uy < 0 || uy >= lh || ux < 0 || ux >= lw) throw ShapeError("erf: latent unit outside the map");
  Tensor<double> sel(y.shape());
  for (int k = 0; k < c; ++k) sel[(static_cast<std::size_t>(k) * lh + uy) * lw + ux] = 1.0;
  const auto obj = ad::sum(ad::mul(y, tape.constant(std::move(sel))));
  tape.backward(obj);
  Maps m;
  m.unit_y = uy;
  m.unit_x = ux;
  m.crop = magnitude(tape.grad(v.x));
  if (v.coords.valid()) m.coords = magnitude(tape.grad(v.coords));
  if (v.global.valid()) {
    m.global = magnitude(tape.grad(v.global));
    m.global_features_grad = tape.grad(tr.global_features);
  }
  return m;
}

inline Maps center_maps(const ModelConfig& cfg, const ParamStore& ps, const model::Inputs& in) {
  const int l = cfg.latent_stride();
  const int lh = 2 * in.x.dim(2) / l, lw = 2 * in.x.dim(3) / l;
  return maps(cfg, ps, in, lh / 2, lw / 2);
}

// Positions of `map` with nonzero value outside the rectangle rows x cols.
inline int outside(const Tensor<double>& map, Interval rows, Interval cols) {
  int n = 0;
  for (int i = 0; i < map.dim(0); ++i) {
    for (int j = 0; j < map.dim(1); ++j) {
      if (map[static_cast<std::size_t>(i) * map.dim(1) + j] != 0.0 && !(rows.contains(i) && cols.contains(j))) ++n;
    }
  }
  return n;
}

// Max relative spread of the pre-pooling gradient within each channel.
inline double spatial_spread(const Tensor<double>& g) {
  const int c = g.dim(1);
  const std::size_t hw = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
  double worst = 0;
  for (int k = 0; k < c; ++k) {
    const double* p = g.data() + k * hw;
    const auto [lo, hi] = std::minmax_element(p, p + hw);
    const double scale = std::max(std::abs(*lo), std::abs(*hi));
    if (scale > 0) worst = std::max(worst, (*hi - *lo) / scale);
  }
  return worst;
}

struct Check {
  Interval rows, cols;            // bound for the centre latent unit
  int map_h = 0, map_w = 0;
  int coords_outside = -1;        // -1 when the coordinate branch is off
  int crop_outside = 0;
  int global_positions = 0;       // latent positions probed for the global branch
  int global_dead = -1;           // positions with zero global gradient, -1 when off
  double global_spread = 0;
};

// Support of the centre unit against its bound, and the global branch
// probed at every latent position.
inline Check check(const ModelConfig& cfg, const ParamStore& ps, const model::Inputs& in) {
  Check c;
  const auto path = coord_path(cfg);
  c.map_h = in.x.dim(2);
  c.map_w = in.x.dim(3);
  const Maps m = center_maps(cfg, ps, in);
  c.rows = back_project(path, c.map_h, {m.unit_y, m.unit_y});
  c.cols = back_project(path, c.map_w, {m.unit_x, m.unit_x});
  c.crop_outside = outside(m.crop, c.rows, c.cols);
  if (!m.coords.empty()) c.coords_outside = outside(m.coords, c.rows, c.cols);
  if (!cfg.use_gft) return c;
  c.global_dead = 0;
  const int l = cfg.latent_stride();
  const int lh = 2 * c.map_h / l, lw = 2 * c.map_w / l;
  for (int y = 0; y < lh; ++y) {
    for (int x = 0; x < lw; ++x) {
      const Maps g = maps(cfg, ps, in, y, x);
      double total = 0;
      for (double v : g.global.vec()) total += v;
      if (!(total > 0)) ++c.global_dead;
      c.global_spread = std::max(c.global_spread, spatial_spread(g.global_features_grad));
      ++c.global_positions;
    }
  }
  return c;
}

}  // namespace realcam::erf
