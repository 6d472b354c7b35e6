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

#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "realcam/dataset.hpp"
#include "realcam/raw_sim.hpp"

namespace realcam::sim {
namespace {

SceneImage constant_scene(int h, int w, float v) {
  SceneImage s(h, w);
  std::fill(s.v.begin(), s.v.end(), v);
  return s;
}

SceneImage random_scene(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  return generate_scene(h, w, rng);
}

TEST(Degrade, IdentityFieldReproducesMosaic) {
  const SceneImage s = random_scene(32, 48, 3);
  auto f = std::make_shared<const DistortionField>(identity_field(32, 48));
  const RawCapture cap = degrade(s, f, 11);
  EXPECT_EQ(cap.raw, mosaic(s));
}

TEST(Degrade, OpticalCenterHasUnitGain) {
  const SceneImage s = constant_scene(16, 16, 0.5f);
  FieldParams fp;
  fp.r0 = half_diagonal(16, 16);
  auto f = std::make_shared<const DistortionField>(make_field(16, 16, fp));
  EXPECT_EQ(f->vignette.at(8, 8), 1.0f);
  const RawCapture cap = degrade(s, f, 1);
  EXPECT_EQ(cap.raw.at(8, 8), 0.5f);
}

TEST(Degrade, CornerGainAtFalloffRadius) {
  const int h = 40, w = 60;
  const Plane v = make_vignette(h, w, half_diagonal(h, w));
  EXPECT_NEAR(v.at(0, 0), 0.25f, 1e-7);
  float mx = 0.0f;
  for (float g : v.v) mx = std::max(mx, g);
  EXPECT_EQ(mx, 1.0f);
  EXPECT_EQ(v.at(h / 2, w / 2), 1.0f);
}

TEST(Degrade, DimensionMismatchThrows) {
  auto f = std::make_shared<const DistortionField>(identity_field(8, 8));
  EXPECT_THROW(degrade(constant_scene(8, 10, 0.1f), f, 0), ShapeError);
}

TEST(Degrade, MosaicPhaseIsRggb) {
  SceneImage s(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      s.at(y, x, 0) = 0.1f;
      s.at(y, x, 1) = 0.5f;
      s.at(y, x, 2) = 0.9f;
    }
  const Plane m = mosaic(s);
  for (int y = 0; y < 8; y += 2)
    for (int x = 0; x < 8; x += 2) {
      EXPECT_EQ(m.at(y, x), 0.1f);
      EXPECT_EQ(m.at(y, x + 1), 0.5f);
      EXPECT_EQ(m.at(y + 1, x), 0.5f);
      EXPECT_EQ(m.at(y + 1, x + 1), 0.9f);
    }
}

TEST(Degrade, NoiseVarianceMatchesModel) {
  const int h = 400, w = 400;  // 1.6e5 pixels
  const float level = 0.4f;
  DistortionField field = identity_field(h, w);
  field.params.read_sigma = 0.01;
  field.params.shot_gain = 0.002;
  const RawCapture cap = degrade(constant_scene(h, w, level),
                                 std::make_shared<const DistortionField>(field), 5);
  double mean = 0, m2 = 0;
  for (float v : cap.raw.v) mean += v;
  mean /= cap.raw.v.size();
  for (float v : cap.raw.v) m2 += (v - mean) * (v - mean);
  const double var = m2 / (cap.raw.v.size() - 1);
  const double expected = 0.01 * 0.01 + 0.002 * level;
  EXPECT_NEAR(var / expected, 1.0, 0.05);
}

TEST(Degrade, DarkShadingIsSmoothAndBounded) {
  Rng rng(42);
  for (int k = 0; k < 20; ++k) {
    const FieldParams fp = random_field_params(64, 96, rng);
    const Plane d = make_dark_shading(64, 96, fp.dark);
    const double bound = dark_gradient_bound(fp.dark, 64, 96);
    EXPECT_LT(bound, 0.01);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 96; ++x) {
        EXPECT_GE(d.at(y, x), 0.0f);
        EXPECT_LE(d.at(y, x), 0.05f + 1e-6f);
        if (x + 1 < 96) {
          EXPECT_LE(std::abs(d.at(y, x + 1) - d.at(y, x)), bound + 1e-6);
        }
        if (y + 1 < 64) {
          EXPECT_LE(std::abs(d.at(y + 1, x) - d.at(y, x)), bound + 1e-6);
        }
      }
    EXPECT_GE(fp.r0, 0.5 * half_diagonal(64, 96));
    EXPECT_LE(fp.r0, 1.0 * half_diagonal(64, 96));
  }
}

TEST(ReferenceIsp, IdentityTone) {
  const SceneImage s = random_scene(16, 16, 9);
  EXPECT_EQ(reference_isp(s, ToneParams{}), s);
}

TEST(ReferenceIsp, GammaClosedForm) {
  ToneParams t;
  t.gamma = 2.2;
  EXPECT_NEAR(tone_curve(0.25, t), 0.5326, 1e-4);
  EXPECT_NEAR(tone_curve(0.25, t), std::pow(0.25, 1 / 2.2), 1e-15);
}

TEST(ReferenceIsp, GlobalCurveIsMonotone) {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    ToneParams t;
    t.gamma = rng.uniform(0.5, 3.0);
    t.s_curve = rng.uniform(0.0, 12.0);
    t.exposure = rng.uniform(0.3, 4.0);
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double v = tone_curve(i / 1000.0, t);
      EXPECT_LE(prev, v);
      prev = v;
    }
  }
}

TEST(ReferenceIsp, RejectsInvalidParams) {
  ToneParams t;
  t.gamma = 0.0;
  EXPECT_THROW(reference_isp(constant_scene(4, 4, 0.2f), t), ConfigError);
  t.gamma = 1.0;
  t.s_curve = -1.0;
  EXPECT_THROW(reference_isp(constant_scene(4, 4, 0.2f), t), ConfigError);
}

struct Fixture {
  SceneImage scene;
  RawCapture cap;
  RgbImage target;
};

Fixture small_capture(int h = 32, int w = 48, double local = 0.0) {
  Fixture f;
  f.scene = random_scene(h, w, 21);
  Rng rng(5);
  auto field = std::make_shared<const DistortionField>(make_field(h, w, random_field_params(h, w, rng)));
  f.cap = degrade(f.scene, field, 8, 3);
  ToneParams t{1.3, 2.2, 3.0, local, 2};
  f.target = reference_isp(f.scene, t);
  return f;
}

TEST(MakeCrop, OriginCoordinatesCoincide) {
  const Fixture f = small_capture();
  const CropSample c = make_crop(f.cap, f.target, 0, 0, 16, 16);
  EXPECT_EQ(c.coord_abs[0], 0.0f);
  EXPECT_EQ(c.coord_abs[64], 0.0f);
  EXPECT_EQ(c.coord_rel[0], 0.0f);
  EXPECT_EQ(c.coord_rel[64], 0.0f);
}

TEST(MakeCrop, AbsoluteCoordinatesOfLargeCapture) {
  RawCapture cap;
  cap.raw = Plane(4000, 6000);
  RgbImage target(4000, 6000);
  const CropSample c = make_crop(cap, target, 100, 200, 8, 8);
  EXPECT_FLOAT_EQ(c.coord_abs[0], 0.025f);
  EXPECT_FLOAT_EQ(c.coord_abs[16], static_cast<float>(200.0 / 6000.0));
  EXPECT_NEAR(c.coord_abs[16], 0.033333, 1e-6);
}

TEST(MakeCrop, OverlappingCropsShareAbsoluteCoordinates) {
  const Fixture f = small_capture();
  const CropSample a = make_crop(f.cap, f.target, 0, 0, 16, 16);
  const CropSample b = make_crop(f.cap, f.target, 4, 8, 16, 16);
  // RAW pixel (8, 12) is stacked (4, 6) in a and (2, 2) in b.
  const int pa = 4 * 8 + 6, pb = 2 * 8 + 2;
  EXPECT_EQ(a.coord_abs[pa], b.coord_abs[pb]);
  EXPECT_EQ(a.coord_abs[64 + pa], b.coord_abs[64 + pb]);
  EXPECT_NE(a.coord_rel[pa], b.coord_rel[pb]);
  EXPECT_EQ(a.x_crop[pa], b.x_crop[pb]);
}

TEST(MakeCrop, CoordinateMapsMatchDefinitions) {
  const Fixture f = small_capture();
  for (int m = 0; m + 16 <= 32; m += 6) {
    for (int n = 0; n + 24 <= 48; n += 8) {
      const CropSample c = make_crop(f.cap, f.target, m, n, 16, 24);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 12; ++j) {
          const int p = i * 12 + j;
          EXPECT_EQ(c.coord_abs[p], static_cast<float>((i + m / 2.0) / 16.0));
          EXPECT_EQ(c.coord_abs[96 + p], static_cast<float>((j + n / 2.0) / 24.0));
          EXPECT_EQ(c.coord_rel[p], static_cast<float>(i / 8.0));
          EXPECT_EQ(c.coord_rel[96 + p], static_cast<float>(j / 12.0));
        }
    }
  }
}

TEST(MakeCrop, RejectsBadGeometry) {
  const Fixture f = small_capture();
  EXPECT_THROW(make_crop(f.cap, f.target, 1, 0, 8, 8), ShapeError);
  EXPECT_THROW(make_crop(f.cap, f.target, 0, 3, 8, 8), ShapeError);
  EXPECT_THROW(make_crop(f.cap, f.target, 28, 0, 8, 8), ShapeError);
  EXPECT_THROW(make_crop(f.cap, f.target, 0, 0, 7, 8), ShapeError);
}

TEST(MakeCrop, PhaseAndAlignment) {
  const Fixture f = small_capture();
  const CropSample c = make_crop(f.cap, f.target, 10, 14, 16, 20);
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 10; ++j) {
        EXPECT_EQ(c.x_crop[(k * 8 + i) * 10 + j], f.cap.raw.at(10 + 2 * i + k / 2, 14 + 2 * j + k % 2));
      }
  // Pointwise tone: the target crop equals the ISP applied to the scene crop.
  SceneImage sc(16, 20);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 20; ++x)
      for (int ch = 0; ch < 3; ++ch) sc.at(y, x, ch) = f.scene.at(10 + y, 14 + x, ch);
  const RgbImage tc = reference_isp(sc, ToneParams{1.3, 2.2, 3.0, 0.0, 2});
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 20; ++x) EXPECT_EQ(c.target[(ch * 16 + y) * 20 + x], tc.at(y, x, ch));
}

TEST(MakeCrop, LocalContrastTargetIsPixelAligned) {
  const Fixture f = small_capture(32, 48, 0.5);
  const CropSample c = make_crop(f.cap, f.target, 6, 8, 12, 16);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 16; ++x) EXPECT_EQ(c.target[(ch * 12 + y) * 16 + x], f.target.at(6 + y, 8 + x, ch));
}

TEST(GlobalInput, AveragesStackedPlanes) {
  Plane raw(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) raw.at(y, x) = static_cast<float>(bayer_channel(y, x)) + 0.01f * y;
  const Tensor<float> g = global_input(raw, 2);
  ASSERT_EQ(g.shape(), (Shape{4, 2, 2}));
  // R plane, top-left block: stacked rows 0..1 -> RAW rows 0, 2.
  EXPECT_NEAR(g[0], 0.01f, 1e-6);
  EXPECT_NEAR(g[3 * 4], 2.0f + 0.02f, 1e-6);
  EXPECT_THROW(global_input(raw, 3), ShapeError);
}

DatasetConfig tiny_config() {
  DatasetConfig cfg;
  cfg.captures = 6;
  cfg.height = 32;
  cfg.width = 32;
  cfg.seed = 77;
  return cfg;
}

TEST(Dataset, SplitRounding) {
  DatasetConfig cfg;
  cfg.captures = 256;
  EXPECT_EQ(cfg.eval_count(), 25);
  EXPECT_EQ(cfg.train_count(), 231);
  cfg.captures = 10;
  EXPECT_EQ(cfg.eval_count(), 1);
  cfg.captures = 9;
  EXPECT_EQ(cfg.eval_count(), 0);
}

TEST(Dataset, DeterministicBytes) {
  const auto a = serialize_dataset(build_dataset(tiny_config()));
  const auto b = serialize_dataset(build_dataset(tiny_config()));
  EXPECT_EQ(a, b);
  DatasetConfig other = tiny_config();
  other.seed = 78;
  EXPECT_NE(a, serialize_dataset(build_dataset(other)));
}

TEST(Dataset, RoundTripAndManifestOracle) {
  const Dataset ds = build_dataset(tiny_config());
  const Dataset back = deserialize_dataset(serialize_dataset(ds));
  ASSERT_EQ(back.captures.size(), ds.captures.size());
  EXPECT_EQ(back.config.captures, 6);
  for (std::size_t i = 0; i < ds.captures.size(); ++i) {
    const auto& c = back.captures[i];
    EXPECT_EQ(c.raw, ds.captures[i].raw);
    EXPECT_EQ(c.target, ds.captures[i].target);
    // Regenerate V from the manifest parameters alone.
    const Plane v = make_vignette(c.raw.height, c.raw.width, c.field.r0);
    for (std::size_t p = 0; p < v.v.size(); ++p) EXPECT_NEAR(v.v[p], c.vignette.v[p], 1e-6);
    const Plane d = make_dark_shading(c.raw.height, c.raw.width, c.field.dark);
    for (std::size_t p = 0; p < d.v.size(); ++p) EXPECT_NEAR(d.v[p], c.dark.v[p], 1e-6);
  }
}

TEST(Dataset, FormatErrors) {
  auto bytes = serialize_dataset(build_dataset(tiny_config()));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_dataset(bad), FormatError);
  auto trunc = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 100);
  EXPECT_THROW(deserialize_dataset(trunc), FormatError);
  auto ver = bytes;
  ver[4] = 9;
  EXPECT_THROW(deserialize_dataset(ver), FormatError);
}

TEST(Dataset, InvalidConfig) {
  DatasetConfig cfg = tiny_config();
  cfg.height = 31;
  EXPECT_THROW(build_dataset(cfg), ConfigError);
  cfg = tiny_config();
  cfg.captures = 0;
  EXPECT_THROW(build_dataset(cfg), ConfigError);
}

}  // namespace
}  // namespace realcam::sim
