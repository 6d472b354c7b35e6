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

// Synthetic RAW capture model: procedural scenes, coordinate-dependent
// distortion fields (vignetting, dark shading, heteroscedastic noise), an
// RGGB mosaic, a reference tone-mapping ISP for targets, and the crop /
// coordinate-map bookkeeping used by the encoder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "realcam/errors.hpp"
#include "realcam/rng.hpp"
#include "realcam/tensor.hpp"

namespace realcam::sim {

// Single-channel H x W image.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<float> v;

  Plane() = default;
  Plane(int h, int w, float fill = 0.0f)
      : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

// Interleaved RGB, H x W x 3.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> v;

  RgbImage() = default;
  RgbImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), v(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return v[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return v[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Linear-light scene radiance in [0, 1] with even dims.
using SceneImage = RgbImage;

// Smooth additive offset term: amp * (1 + cos(2*pi*(fy*y/H + fx*x/W) + phase)) / 2.
struct CosineTerm {
  double amp = 0.0;
  double fy = 0.0;
  double fx = 0.0;
  double phase = 0.0;
};

struct FieldParams {
  double r0 = 1.0;  // vignette falloff radius, pixels
  std::array<CosineTerm, 3> dark{};
  double read_sigma = 0.0;
  double shot_gain = 0.0;
};

struct DistortionField {
  FieldParams params;
  Plane vignette;  // V in (0, 1], 1 at the optical center (H/2, W/2)
  Plane dark;      // D >= 0
};

struct RawCapture {
  std::uint32_t capture_id = 0;
  Plane raw;  // RGGB mosaic, R at (0, 0), clipped to [0, 1]
  std::shared_ptr<const DistortionField> field;
  int height() const { return raw.height; }
  int width() const { return raw.width; }
};

inline double half_diagonal(int h, int w) {
  return std::sqrt(0.25 * h * h + 0.25 * w * w);
}

// V(r) = (1 + (r / r0)^2)^-2 with r measured from pixel (H/2, W/2).
inline double vignette_gain(double r, double r0) {
  const double q = r / r0;
  const double d = 1.0 + q * q;
  return 1.0 / (d * d);
}

inline Plane make_vignette(int h, int w, double r0) {
  Plane p(h, w);
  const double cy = 0.5 * h, cx = 0.5 * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      p.at(y, x) = static_cast<float>(vignette_gain(std::hypot(y - cy, x - cx), r0));
    }
  }
  return p;
}

inline Plane make_dark_shading(int h, int w, const std::array<CosineTerm, 3>& terms) {
  Plane p(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double d = 0.0;
      for (const auto& t : terms) {
        d += t.amp * 0.5 *
             (1.0 + std::cos(2.0 * M_PI * (t.fy * y / h + t.fx * x / w) + t.phase));
      }
      p.at(y, x) = static_cast<float>(d);
    }
  }
  return p;
}

inline DistortionField make_field(int h, int w, const FieldParams& fp) {
  return DistortionField{fp, make_vignette(h, w, fp.r0), make_dark_shading(h, w, fp.dark)};
}

// Identity field: V = 1, D = 0, no noise.
inline DistortionField identity_field(int h, int w) {
  DistortionField f;
  f.params.r0 = 1e300;
  f.vignette = Plane(h, w, 1.0f);
  f.dark = Plane(h, w, 0.0f);
  return f;
}

struct FieldRanges {
  double r0_min = 0.5;  // fractions of the half-diagonal
  double r0_max = 1.0;
  double dark_amp_total = 0.05;
  double dark_max_freq = 1.5;  // cycles per image
  double read_sigma_min = 0.002;
  double read_sigma_max = 0.01;
  double shot_gain_min = 1e-4;
  double shot_gain_max = 1e-3;
};

inline FieldParams random_field_params(int h, int w, Rng& rng, const FieldRanges& fr = {}) {
  FieldParams fp;
  fp.r0 = rng.uniform(fr.r0_min, fr.r0_max) * half_diagonal(h, w);
  std::array<double, 3> weights{};
  double total = 0.0;
  for (auto& wt : weights) total += (wt = rng.uniform(0.1, 1.0));
  const double budget = rng.uniform(0.5, 1.0) * fr.dark_amp_total;
  for (std::size_t k = 0; k < 3; ++k) {
    fp.dark[k].amp = budget * weights[k] / total;
    fp.dark[k].fy = rng.uniform(-fr.dark_max_freq, fr.dark_max_freq);
    fp.dark[k].fx = rng.uniform(-fr.dark_max_freq, fr.dark_max_freq);
    fp.dark[k].phase = rng.uniform(0.0, 2.0 * M_PI);
  }
  fp.read_sigma = rng.uniform(fr.read_sigma_min, fr.read_sigma_max);
  fp.shot_gain = rng.uniform(fr.shot_gain_min, fr.shot_gain_max);
  return fp;
}

// Largest |dD/dy| or |dD/dx| of a dark-shading parameter set (analytic).
inline double dark_gradient_bound(const std::array<CosineTerm, 3>& terms, int h, int w) {
  double b = 0.0;
  for (const auto& t : terms) {
    b += t.amp * 0.5 * 2.0 * M_PI * std::max(std::abs(t.fy) / h, std::abs(t.fx) / w);
  }
  return b;
}

// RGGB phase of a mosaic position: 0 = R, 1 = G, 2 = B.
constexpr int bayer_channel(int y, int x) {
  return (y % 2 == 0) ? ((x % 2 == 0) ? 0 : 1) : ((x % 2 == 0) ? 1 : 2);
}

inline Plane mosaic(const SceneImage& s) {
  Plane p(s.height, s.width);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) p.at(y, x) = s.at(y, x, bayer_channel(y, x));
  }
  return p;
}

inline void check_scene(const SceneImage& s) {
  if (s.height <= 0 || s.width <= 0 || s.height % 2 || s.width % 2) {
    throw ShapeError("scene dims must be positive and even, got " + std::to_string(s.height) +
                     "x" + std::to_string(s.width));
  }
}

// raw = clip(mosaic(scene) * V + D + eta), eta ~ N(0, read_sigma^2 + shot_gain * signal).
inline RawCapture degrade(const SceneImage& scene, std::shared_ptr<const DistortionField> field,
                          std::uint64_t seed, std::uint32_t capture_id = 0) {
  check_scene(scene);
  const auto& f = *field;
  if (f.vignette.height != scene.height || f.vignette.width != scene.width ||
      f.dark.height != scene.height || f.dark.width != scene.width) {
    throw ShapeError("degrade: field " + std::to_string(f.vignette.height) + "x" +
                     std::to_string(f.vignette.width) + " does not match scene " +
                     std::to_string(scene.height) + "x" + std::to_string(scene.width));
  }
  Rng rng(seed);
  RawCapture cap;
  cap.capture_id = capture_id;
  cap.raw = mosaic(scene);
  const double rs2 = f.params.read_sigma * f.params.read_sigma;
  const double g = f.params.shot_gain;
  const bool noisy = rs2 > 0.0 || g > 0.0;
  for (std::size_t i = 0; i < cap.raw.v.size(); ++i) {
    double s = static_cast<double>(cap.raw.v[i]) * f.vignette.v[i] + f.dark.v[i];
    if (noisy) s += std::sqrt(rs2 + g * std::max(s, 0.0)) * rng.normal();
    cap.raw.v[i] = static_cast<float>(std::clamp(s, 0.0, 1.0));
  }
  cap.field = std::move(field);
  return cap;
}

struct ToneParams {
  double exposure = 1.0;        // linear gain before the curve
  double gamma = 1.0;           // out = in^(1/gamma)
  double s_curve = 0.0;         // logistic slope; 0 disables
  double local_contrast = 0.0;  // unsharp-style detail gain; 0 disables
  int local_radius = 4;         // box radius of the local-mean estimate

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("tone: gamma must be > 0");
    if (!(s_curve >= 0.0)) throw ConfigError("tone: s-curve strength must be >= 0");
    if (!(exposure > 0.0)) throw ConfigError("tone: exposure must be > 0");
    if (!(local_contrast >= 0.0)) throw ConfigError("tone: local contrast must be >= 0");
    if (local_radius < 1) throw ConfigError("tone: local radius must be >= 1");
  }
};

// Monotone global curve: exposure, clip, gamma, then a normalised logistic.
inline double tone_curve(double v, const ToneParams& t) {
  v = std::clamp(v * t.exposure, 0.0, 1.0);
  if (t.gamma != 1.0) v = std::pow(v, 1.0 / t.gamma);
  if (t.s_curve > 0.0) {
    const double k = t.s_curve;
    auto sig = [k](double u) { return 1.0 / (1.0 + std::exp(-k * (u - 0.5))); };
    const double lo = sig(0.0), hi = sig(1.0);
    v = (sig(v) - lo) / (hi - lo);
  }
  return v;
}

// Edge-clamped box mean of one channel of an RGB image.
inline std::vector<double> box_mean(const RgbImage& im, int c, int r) {
  const int h = im.height, w = im.width;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w), out(tmp.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += im.at(y, std::clamp(x + d, 0, w - 1), c);
      tmp[static_cast<std::size_t>(y) * w + x] = s / (2 * r + 1);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d) s += tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s / (2 * r + 1);
    }
  }
  return out;
}

// Target RGB: global tone curve, then an optional local-contrast term
// g + k * (g - boxmean(g)), clipped to [0, 1].
inline RgbImage reference_isp(const SceneImage& scene, const ToneParams& tone) {
  tone.validate();
  RgbImage out(scene.height, scene.width);
  for (std::size_t i = 0; i < scene.v.size(); ++i) {
    out.v[i] = static_cast<float>(tone_curve(scene.v[i], tone));
  }
  if (tone.local_contrast > 0.0) {
    const RgbImage base = out;
    for (int c = 0; c < 3; ++c) {
      const auto mean = box_mean(base, c, tone.local_radius);
      for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
          const double g = base.at(y, x, c);
          const double m = mean[static_cast<std::size_t>(y) * out.width + x];
          out.at(y, x, c) = static_cast<float>(std::clamp(g + tone.local_contrast * (g - m), 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

inline double mean_luminance(const SceneImage& s) {
  double acc = 0.0;
  const std::size_t n = static_cast<std::size_t>(s.height) * s.width;
  for (std::size_t i = 0; i < n; ++i) {
    acc += 0.2126 * s.v[3 * i] + 0.7152 * s.v[3 * i + 1] + 0.0722 * s.v[3 * i + 2];
  }
  return acc / static_cast<double>(n);
}

// Auto-exposure: scale the scene so its mean luminance lands on 0.18.
inline double auto_exposure(const SceneImage& s) {
  return std::clamp(0.18 / std::max(mean_luminance(s), 1e-6), 0.25, 8.0);
}

// Procedural scene: two-colour gradient, random discs and boxes, a
// band-limited texture, and a global brightness scale.
inline SceneImage generate_scene(int h, int w, Rng& rng) {
  SceneImage s(h, w);
  std::array<double, 3> c0{}, c1{};
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.05, 0.9);
    c1[c] = rng.uniform(0.05, 0.9);
  }
  const double ang = rng.uniform(0.0, 2.0 * M_PI);
  const double dy = std::sin(ang), dx = std::cos(ang);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = std::clamp(0.5 + 0.5 * (dy * (2.0 * y / h - 1.0) + dx * (2.0 * x / w - 1.0)), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) s.at(y, x, c) = static_cast<float>(c0[c] + t * (c1[c] - c0[c]));
    }
  }
  const int shapes = 6 + static_cast<int>(rng.below(10));
  for (int k = 0; k < shapes; ++k) {
    std::array<double, 3> col{};
    for (auto& v : col) v = rng.uniform(0.0, 1.0);
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    const double ry = rng.uniform(0.03, 0.2) * h, rx = rng.uniform(0.03, 0.2) * w;
    const bool disc = rng.uniform() < 0.5;
    for (int y = std::max(0, int(cy - ry)); y < std::min(h, int(cy + ry) + 1); ++y) {
      for (int x = std::max(0, int(cx - rx)); x < std::min(w, int(cx + rx) + 1); ++x) {
        const double u = (y - cy) / ry, v = (x - cx) / rx;
        if (disc && u * u + v * v > 1.0) continue;
        for (int c = 0; c < 3; ++c) s.at(y, x, c) = static_cast<float>(col[c]);
      }
    }
  }
  struct Wave {
    double fy, fx, ph, amp;
  };
  std::array<Wave, 4> waves{};
  for (auto& wv : waves) {
    wv = {rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(0, 2 * M_PI), rng.uniform(0.02, 0.08)};
  }
  const double brightness = rng.uniform(0.25, 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double tex = 1.0;
      for (const auto& wv : waves) {
        tex += wv.amp * std::sin(2 * M_PI * (wv.fy * y / h + wv.fx * x / w) + wv.ph);
      }
      for (int c = 0; c < 3; ++c) {
        s.at(y, x, c) = static_cast<float>(std::clamp(s.at(y, x, c) * tex * brightness, 0.0, 1.0));
      }
    }
  }
  return s;
}

// Reads a binary PPM (P6, maxval 255) and decodes sRGB to linear light.
// Odd trailing rows/columns are dropped to keep Bayer-compatible dims.
inline SceneImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 2 || h < 2 || maxval != 255) {
    throw FormatError(path + ": expected binary PPM (P6) with maxval 255");
  }
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path + ": truncated pixel data");
  }
  SceneImage s(h - h % 2, w - w % 2);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double e = bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
        const double lin = e <= 0.04045 ? e / 12.92 : std::pow((e + 0.055) / 1.055, 2.4);
        s.at(y, x, c) = static_cast<float>(lin);
      }
    }
  }
  return s;
}

// Stacked RGGB planes [4, H/2, W/2] of a mosaic region.
inline Tensor<float> stack_rggb(const Plane& raw, int m = 0, int n = 0, int h = -1, int w = -1) {
  if (h < 0) h = raw.height;
  if (w < 0) w = raw.width;
  Tensor<float> t(Shape{4, h / 2, w / 2});
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < h / 2; ++i) {
      for (int j = 0; j < w / 2; ++j) {
        t[(static_cast<std::size_t>(k) * (h / 2) + i) * (w / 2) + j] =
            raw.at(m + 2 * i + k / 2, n + 2 * j + k % 2);
      }
    }
  }
  return t;
}

// Area-downsampled stacked RAW, [4, size, size]; input for the global prior.
inline Tensor<float> global_input(const Plane& raw, int size) {
  const int sh = raw.height / 2, sw = raw.width / 2;
  if (size <= 0 || sh % size || sw % size) {
    throw ShapeError("global input size " + std::to_string(size) +
                     " must divide stacked dims " + std::to_string(sh) + "x" + std::to_string(sw));
  }
  const int fy = sh / size, fx = sw / size;
  const Tensor<float> st = stack_rggb(raw);
  Tensor<float> out(Shape{4, size, size});
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < sh; ++i) {
      for (int j = 0; j < sw; ++j) {
        out[(static_cast<std::size_t>(k) * size + i / fy) * size + j / fx] +=
            st[(static_cast<std::size_t>(k) * sh + i) * sw + j];
      }
    }
  }
  for (auto& v : out.vec()) v /= static_cast<float>(fy * fx);
  return out;
}

// Absolute coordinate of stacked-grid row i in a crop at RAW row m of a
// capture with H RAW rows: (i + m/2) / (H/2), i.e. (2i + m) / H.
inline double absolute_coord(int i, int m, int full) {
  return static_cast<double>(2 * i + m) / full;
}

// Relative coordinate of stacked-grid row i in a crop of h RAW rows.
inline double relative_coord(int i, int h) {
  return static_cast<double>(2 * i) / h;
}

struct CropSample {
  std::uint32_t capture_id = 0;
  int m = 0, n = 0;            // RAW-pixel origin, even
  int h = 0, w = 0;            // RAW-pixel crop size, even
  int full_h = 0, full_w = 0;  // capture dims
  Tensor<float> x_crop;        // [4, h/2, w/2] stacked RGGB
  Tensor<float> coord_abs;     // [2, h/2, w/2] (row, col) absolute
  Tensor<float> coord_rel;     // [2, h/2, w/2] (row, col) relative
  Tensor<float> target;        // [3, h, w]
  Plane vignette;              // h x w
  Plane dark;                  // h x w
};

inline CropSample make_crop(const RawCapture& cap, const RgbImage& target, int m, int n, int h,
                            int w) {
  const int H = cap.height(), W = cap.width();
  if (m % 2 || n % 2) {
    throw ShapeError("make_crop: origin (" + std::to_string(m) + "," + std::to_string(n) +
                     ") must be even to preserve the RGGB phase");
  }
  if (h <= 0 || w <= 0 || h % 2 || w % 2) throw ShapeError("make_crop: crop dims must be positive and even");
  if (m < 0 || n < 0 || m + h > H || n + w > W) {
    throw ShapeError("make_crop: crop [" + std::to_string(m) + "+" + std::to_string(h) + ", " +
                     std::to_string(n) + "+" + std::to_string(w) + "] exceeds capture " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  if (target.height != H || target.width != W) throw ShapeError("make_crop: target dims differ from capture");
  CropSample s;
  s.capture_id = cap.capture_id;
  s.m = m;
  s.n = n;
  s.h = h;
  s.w = w;
  s.full_h = H;
  s.full_w = W;
  s.x_crop = stack_rggb(cap.raw, m, n, h, w);
  const int hh = h / 2, hw = w / 2;
  s.coord_abs = Tensor<float>(Shape{2, hh, hw});
  s.coord_rel = Tensor<float>(Shape{2, hh, hw});
  for (int i = 0; i < hh; ++i) {
    for (int j = 0; j < hw; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * hw + j;
      s.coord_abs[p] = static_cast<float>(absolute_coord(i, m, H));
      s.coord_abs[hh * hw + p] = static_cast<float>(absolute_coord(j, n, W));
      s.coord_rel[p] = static_cast<float>(relative_coord(i, h));
      s.coord_rel[hh * hw + p] = static_cast<float>(relative_coord(j, w));
    }
  }
  s.target = Tensor<float>(Shape{3, h, w});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        s.target[(static_cast<std::size_t>(c) * h + y) * w + x] = target.at(m + y, n + x, c);
      }
    }
  }
  if (cap.field) {
    s.vignette = Plane(h, w);
    s.dark = Plane(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        s.vignette.at(y, x) = cap.field->vignette.at(m + y, n + x);
        s.dark.at(y, x) = cap.field->dark.at(m + y, n + x);
      }
    }
  }
  return s;
}

}  // namespace realcam::sim
