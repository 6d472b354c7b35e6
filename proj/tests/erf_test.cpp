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


#include <gtest/gtest.h>

#include "realcam/codec.hpp"
#include "realcam/erf.hpp"

namespace realcam::erf {
namespace {

using model::CoordMode;

model::Inputs capture_input(const ModelConfig& cfg, int crop, int m, int n0) {
  static const sim::Dataset ds = [] {
    sim::DatasetConfig dc;
    dc.captures = 1;
    dc.height = 256;
    dc.width = 256;
    dc.eval_fraction = 0;
    dc.seed = 5;
    return sim::build_dataset(dc);
  }();
  const auto& rec = ds.captures.at(0);
  codec::Batch b = codec::make_batch(cfg, 1, crop, crop);
  codec::fill_slot(b, 0, cfg, rec, sim::global_input(rec.raw, cfg.global_size), m, n0);
  return b.in;
}

TEST(BackProject, SingleLayers) {
  const std::vector<Stage> c3{{Stage::conv, 3, 1, 0}};
  EXPECT_EQ(back_project(c3, 16, {5, 5}).lo, 4);
  EXPECT_EQ(back_project(c3, 16, {5, 5}).hi, 6);
  EXPECT_EQ(back_project(c3, 16, {0, 0}).lo, 0);  // clipped at the border
  const std::vector<Stage> s2{{Stage::conv, 3, 2, 0}};
  const Interval r = back_project(s2, 16, {3, 3});
  EXPECT_EQ(r.lo, 5);
  EXPECT_EQ(r.hi, 7);
  const std::vector<Stage> win{{Stage::window, 1, 1, 8}};
  EXPECT_EQ(back_project(win, 32, {9, 9}).lo, 8);
  EXPECT_EQ(back_project(win, 32, {9, 9}).hi, 15);
  const std::vector<Stage> glob{{Stage::global, 1, 1, 0}};
  EXPECT_EQ(back_project(glob, 32, {9, 9}).size(), 32);
}

TEST(BackProject, NoCsaStack) {
  ModelConfig cfg;
  cfg.use_csa = false;
  // coord conv3, two conv3/s2, 1x1 out: 1 -> 3 -> 7 -> 9 wide.
  const Interval r = back_project(coord_path(cfg), 64, {8, 8});
  EXPECT_EQ(r.lo, 28);
  EXPECT_EQ(r.hi, 36);
}

TEST(Erf, NoCsaSupportInsideStrictBound) {
  ModelConfig cfg;
  cfg.use_csa = false;
  const ParamStore ps = model::init_params(cfg, 7);
  const Check c = check(cfg, ps, capture_input(cfg, 128, 64, 32));
  EXPECT_LT(c.rows.size(), c.map_h);
  EXPECT_LT(c.cols.size(), c.map_w);
  EXPECT_EQ(c.coords_outside, 0);
  EXPECT_EQ(c.crop_outside, 0);
  EXPECT_EQ(c.global_dead, 0);
  EXPECT_LT(c.global_spread, 1e-9);
}

TEST(Erf, CoordSupportIsLocalWithoutAttention) {
  ModelConfig cfg;
  cfg.use_csa = false;
  const ParamStore ps = model::init_params(cfg, 7);
  const Maps m = center_maps(cfg, ps, capture_input(cfg, 128, 0, 0));
  int nonzero = 0;
  for (double v : m.coords.vec()) nonzero += v > 0;
  EXPECT_GT(nonzero, 0);
  EXPECT_LT(nonzero, 9 * 9 + 1);
  // The bound is tight: one pixel less on each side leaves crop influence out.
  const auto path = coord_path(cfg);
  const Interval r = back_project(path, 64, {m.unit_y, m.unit_y});
  const Interval c = back_project(path, 64, {m.unit_x, m.unit_x});
  EXPECT_EQ(outside(m.crop, r, c), 0);
  EXPECT_GT(outside(m.crop, {r.lo + 1, r.hi - 1}, {c.lo + 1, c.hi - 1}), 0);
}

TEST(Erf, FullModelGlobalBranchReachesEveryPosition) {
  const ModelConfig cfg;
  const ParamStore ps = model::init_params(cfg, 3);
  const Check c = check(cfg, ps, capture_input(cfg, 64, 96, 160));
  EXPECT_EQ(c.coords_outside, 0);
  EXPECT_EQ(c.global_positions, 64);
  EXPECT_EQ(c.global_dead, 0);
  // Gradient at the map feeding the average pool is the same everywhere.
  EXPECT_LT(c.global_spread, 1e-9);
}

TEST(Erf, RelativeCoordsAreStillTracked) {
  ModelConfig cfg;
  cfg.coord_mode = CoordMode::relative;
  cfg.use_gft = false;
  const ParamStore ps = model::init_params(cfg, 3);
  const Check c = check(cfg, ps, capture_input(cfg, 64, 0, 0));
  EXPECT_EQ(c.coords_outside, 0);
  EXPECT_EQ(c.global_dead, -1);
}

TEST(Erf, RejectsBatchesAndBadUnits) {
  const ModelConfig cfg;
  const ParamStore ps = model::init_params(cfg, 3);
  const model::Inputs in = capture_input(cfg, 64, 0, 0);
  EXPECT_THROW(maps(cfg, ps, in, 8, 0), ShapeError);
  model::Inputs two = in;
  two.x = Tensor<float>(Shape{2, 4, 32, 32});
  EXPECT_THROW(maps(cfg, ps, two, 0, 0), ShapeError);
}

}  // namespace
}  // namespace realcam::erf
