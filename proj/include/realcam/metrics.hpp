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

// Image quality metrics on RGB images with values in [0, 1]: PSNR,
// multi-scale SSIM (with its dB transform) and mean CIE76 colour difference.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "realcam/errors.hpp"
#include "realcam/raw_sim.hpp"

namespace realcam::metrics {

using sim::RgbImage;

inline constexpr double kDbCap = 100.0;

inline void require_same(const char* op, const RgbImage& a, const RgbImage& b) {
  if (a.height != b.height || a.width != b.width || a.v.size() != b.v.size()) {
    throw ShapeError(std::string(op) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
  if (a.v.empty()) throw ShapeError(std::string(op) + ": empty image");
}

struct Psnr {
  double db = 0.0;
  bool identical = false;
};

inline double mse(const RgbImage& a, const RgbImage& b) {
  require_same("mse", a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double d = double(a.v[i]) - b.v[i];
    s += d * d;
  }
  return s / double(a.v.size());
}

inline Psnr psnr_from_mse(double m, double peak = 1.0) {
  if (m <= 0.0) return {kDbCap, true};
  return {std::min(kDbCap, 10.0 * std::log10(peak * peak / m)), false};
}

inline Psnr psnr(const RgbImage& a, const RgbImage& b, double peak = 1.0) {
  return psnr_from_mse(mse(a, b), peak);
}

// ---------------------------------------------------------------------------
// MS-SSIM

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsim {
  double raw = 0.0;
  double db = 0.0;
  int scales = 0;      // below 5 when the image is too small; weights renormalised
  int filter = 0;      // Gaussian window size at the finest scale
};

inline double msssim_db(double raw) {
  const double r = 1.0 - raw;
  if (r <= 1e-10) return kDbCap;
  return std::min(kDbCap, -10.0 * std::log10(r));
}

namespace detail {

struct Gray {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Gray channel(const RgbImage& im, int c) {
  Gray g{im.height, im.width, std::vector<double>(static_cast<std::size_t>(im.height) * im.width)};
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) g.v[static_cast<std::size_t>(y) * im.width + x] = im.at(y, x, c);
  return g;
}

inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(size);
  double s = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Separable "valid" filtering.
inline Gray filter_valid(const Gray& in, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = in.h - k + 1, ow = in.w - k + 1;
  Gray tmp{in.h, ow, std::vector<double>(static_cast<std::size_t>(in.h) * ow)};
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += g[i] * in.at(y, x + i);
      tmp.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  Gray out{oh, ow, std::vector<double>(static_cast<std::size_t>(oh) * ow)};
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp.at(y + i, x);
      out.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

inline Gray downsample2(const Gray& in) {
  Gray o{in.h / 2, in.w / 2, {}};
  o.v.resize(static_cast<std::size_t>(o.h) * o.w);
  for (int y = 0; y < o.h; ++y)
    for (int x = 0; x < o.w; ++x) {
      o.v[static_cast<std::size_t>(y) * o.w + x] =
          0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) + in.at(2 * y + 1, 2 * x) +
                  in.at(2 * y + 1, 2 * x + 1));
    }
  return o;
}

// Mean SSIM and mean contrast-structure term at one scale.
inline std::pair<double, double> ssim_cs(const Gray& a, const Gray& b, const std::vector<double>& g) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Gray aa = a, bb = b, ab = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Gray ma = filter_valid(a, g), mb = filter_valid(b, g);
  const Gray saa = filter_valid(aa, g), sbb = filter_valid(bb, g), sab = filter_valid(ab, g);
  double ssim = 0, cs = 0;
  for (std::size_t i = 0; i < ma.v.size(); ++i) {
    const double mu_a = ma.v[i], mu_b = mb.v[i];
    const double va = saa.v[i] - mu_a * mu_a, vb = sbb.v[i] - mu_b * mu_b, cov = sab.v[i] - mu_a * mu_b;
    const double c = (2 * cov + c2) / (va + vb + c2);
    cs += c;
    ssim += c * (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
  }
  const double n = double(ma.v.size());
  return {ssim / n, cs / n};
}

}  // namespace detail

inline int msssim_scales(int h, int w) {
  const int m = std::min(h, w);
  if (m < 10) return 0;
  return std::min(5, 1 + static_cast<int>(std::floor(std::log2(m / 10.0))));
}

// Five-scale MS-SSIM with the standard weights. Smaller images use fewer
// scales (first weights, renormalised); fewer than 3 scales is an error.
// Per-channel values are averaged.
inline MsSsim ms_ssim(const RgbImage& a, const RgbImage& b) {
  require_same("ms_ssim", a, b);
  const int scales = msssim_scales(a.height, a.width);
  if (scales < 3) {
    throw ShapeError("ms_ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " too small for 3 scales (need at least 40x40)");
  }
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];
  const int fs = std::min({11, a.height, a.width});
  const auto taps = detail::gaussian_taps(fs, 1.5 * fs / 11.0);
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    detail::Gray x = detail::channel(a, c), y = detail::channel(b, c);
    double prod = 1.0;
    for (int s = 0; s < scales; ++s) {
      const int fsz = std::min({fs, x.h, x.w});
      const auto g = fsz == fs ? taps : detail::gaussian_taps(fsz, 1.5 * fsz / 11.0);
      const auto [ssim, cs] = detail::ssim_cs(x, y, g);
      const double term = s + 1 == scales ? ssim : cs;
      prod *= std::pow(std::max(term, 0.0), kMsSsimWeights[s] / wsum);
      if (s + 1 < scales) {
        x = detail::downsample2(x);
        y = detail::downsample2(y);
      }
    }
    total += prod;
  }
  MsSsim r;
  r.raw = a.v == b.v ? 1.0 : total / 3.0;
  r.db = msssim_db(r.raw);
  r.scales = scales;
  r.filter = fs;
  return r;
}

// ---------------------------------------------------------------------------
// CIE76 colour difference

struct Lab {
  double l, a, b;
};

inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

// sRGB (D65) -> CIELAB.
inline Lab srgb_to_lab(double r, double g, double b) {
  r = srgb_to_linear(r);
  g = srgb_to_linear(g);
  b = srgb_to_linear(b);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
  };
  const double fx = f(x / 0.95047), fy = f(y / 1.0), fz = f(z / 1.08883);
  return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

inline double delta_e76(const Lab& p, const Lab& q) {
  return std::sqrt((p.l - q.l) * (p.l - q.l) + (p.a - q.a) * (p.a - q.a) + (p.b - q.b) * (p.b - q.b));
}

inline double delta_e(const RgbImage& a, const RgbImage& b) {
  require_same("delta_e", a, b);
  double s = 0;
  const std::size_t n = a.v.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &a.v[3 * i];
    const float* q = &b.v[3 * i];
    if (p[0] == q[0] && p[1] == q[1] && p[2] == q[2]) continue;
    s += delta_e76(srgb_to_lab(p[0], p[1], p[2]), srgb_to_lab(q[0], q[1], q[2]));
  }
  return s / double(n);
}

}  // namespace realcam::metrics
