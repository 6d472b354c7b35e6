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

// Independent reference implementations and input generators shared by the
// unit tests, the acceptance suite and `realcam selftest`. The oracles do
// not call into the code they check; the generators may.

#include <algorithm>
#include <cmath>
#include <vector>

#include "realcam/bd.hpp"
#include "realcam/entropy.hpp"
#include "realcam/raw_sim.hpp"
#include "realcam/rng.hpp"

namespace realcam::oracle {

using bd::Curve;
using entropy::CdfTable;
using entropy::ChannelModel;
using entropy::kSymMin;
using entropy::kTotal;
using entropy::Quantized;
using sim::RgbImage;

inline RgbImage random_image(int h, int w, std::uint64_t seed) {
  RgbImage im(h, w);
  Rng rng(seed);
  for (auto& v : im.v) v = static_cast<float>(rng.uniform());
  return im;
}

// Smooth image plus independent noise, clipped to [0, 1].
inline RgbImage noisy_copy(const RgbImage& a, double amp, std::uint64_t seed) {
  RgbImage b = a;
  Rng rng(seed);
  for (auto& v : b.v) v = static_cast<float>(std::clamp(v + amp * rng.normal(), 0.0, 1.0));
  return b;
}

inline RgbImage smooth_image(int h, int w, std::uint64_t seed) {
  RgbImage im(h, w);
  Rng rng(seed);
  const double fx = rng.uniform(1, 4), fy = rng.uniform(1, 4), ph = rng.uniform(0, 6);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(y, x, c) = static_cast<float>(0.5 + 0.3 * std::sin(fx * x / w * 6.28 + ph + c) *
                                                      std::cos(fy * y / h * 6.28 - c));
  return im;
}

// Direct-formula MS-SSIM: explicit 2-D Gaussian window evaluated at every
// valid position, no separability, no shared helpers. As in the reference
// TensorFlow implementation the window shrinks to the image at coarse scales
// (sigma scaled with it).
inline double oracle_ms_ssim(const RgbImage& a, const RgbImage& b) {
  const double w[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double acc = 0;
  for (int c = 0; c < 3; ++c) {
    int h = a.height, wd = a.width;
    std::vector<double> x(h * wd), y(h * wd);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j) {
        x[i * wd + j] = a.at(i, j, c);
        y[i * wd + j] = b.at(i, j, c);
      }
    double ms = 1;
    for (int s = 0; s < 5; ++s) {
      const int k = std::min({11, h, wd});
      const double sg = 1.5 * k / 11.0, mid = (k - 1) / 2.0;
      std::vector<double> win(k * k);
      double tot = 0;
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          win[u * k + v] = std::exp(-((u - mid) * (u - mid) + (v - mid) * (v - mid)) / (2 * sg * sg));
          tot += win[u * k + v];
        }
      for (double& v : win) v /= tot;
      double sum_ssim = 0, sum_cs = 0;
      int count = 0;
      for (int i = 0; i + k <= h; ++i)
        for (int j = 0; j + k <= wd; ++j) {
          double mx = 0, my = 0;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              mx += win[u * k + v] * x[(i + u) * wd + j + v];
              my += win[u * k + v] * y[(i + u) * wd + j + v];
            }
          double vx = 0, vy = 0, cxy = 0;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const double dx = x[(i + u) * wd + j + v] - mx, dy = y[(i + u) * wd + j + v] - my;
              vx += win[u * k + v] * dx * dx;
              vy += win[u * k + v] * dy * dy;
              cxy += win[u * k + v] * dx * dy;
            }
          const double c1 = 1e-4, c2 = 9e-4;
          const double cs = (2 * cxy + c2) / (vx + vy + c2);
          sum_cs += cs;
          sum_ssim += cs * (2 * mx * my + c1) / (mx * mx + my * my + c1);
          ++count;
        }
      const double t = s == 4 ? sum_ssim / count : sum_cs / count;
      ms *= std::pow(std::max(t, 0.0), w[s]);
      if (s < 4) {
        const int nh = h / 2, nw = wd / 2;
        std::vector<double> nx(nh * nw), ny(nh * nw);
        for (int i = 0; i < nh; ++i)
          for (int j = 0; j < nw; ++j) {
            nx[i * nw + j] = (x[2 * i * wd + 2 * j] + x[2 * i * wd + 2 * j + 1] + x[(2 * i + 1) * wd + 2 * j] +
                              x[(2 * i + 1) * wd + 2 * j + 1]) / 4;
            ny[i * nw + j] = (y[2 * i * wd + 2 * j] + y[2 * i * wd + 2 * j + 1] + y[(2 * i + 1) * wd + 2 * j] +
                              y[(2 * i + 1) * wd + 2 * j + 1]) / 4;
          }
        x.swap(nx);
        y.swap(ny);
        h = nh;
        wd = nw;
      }
    }
    acc += ms;
  }
  return acc / 3;
}

// Scalar L* of a neutral grey, written out independently.
inline double grey_lightness(double v) {
  const double lin = v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
  return lin > 216.0 / 24389.0 ? 116.0 * std::cbrt(lin) - 16.0 : 24389.0 / 27.0 * lin;
}

// Analytic RD curve 30 + 2 log2(r) + offset at r = 0.1, 0.2, 0.4, 0.8.
inline Curve analytic(double offset) {
  Curve c;
  for (double r : {0.1, 0.2, 0.4, 0.8}) {
    c.rate.push_back(r);
    c.metric.push_back(30.0 + 2.0 * std::log2(r) + offset);
  }
  return c;
}

// Trapezoid integration of the analytic curves, independent of the fits.
inline double trapezoid_bd_psnr(double offset) {
  const int n = 100000;
  const double lo = std::log(0.1), hi = std::log(0.8);
  double s = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + (hi - lo) * i / n;
    const double gap = (30 + 2 * x / std::log(2.0) + offset) - (30 + 2 * x / std::log(2.0));
    s += (i == 0 || i == n ? 0.5 : 1.0) * gap;
  }
  return s / n;
}

inline double trapezoid_bd_rate(double offset) {
  // log r(q) = (q - 30 - offset) ln2 / 2 for the test curve.
  const int n = 100000;
  const double lo = 30 + 2 * std::log2(0.1) + offset, hi = 30 + 2 * std::log2(0.8);
  double s = 0;
  for (int i = 0; i <= n; ++i) {
    const double q = lo + (hi - lo) * i / n;
    const double gap = (q - 30 - offset) * std::log(2.0) / 2 - (q - 30) * std::log(2.0) / 2;
    s += (i == 0 || i == n ? 0.5 : 1.0) * gap;
  }
  return (std::exp(s / n) - 1) * 100;
}

// Symbols drawn from the integer tables themselves.
inline Quantized sample_latent(const std::vector<CdfTable>& tables, int h, int w, Rng& rng) {
  const int c = static_cast<int>(tables.size());
  Quantized q{{c, h, w}, std::vector<int>(static_cast<std::size_t>(c) * h * w), 0};
  for (std::size_t i = 0; i < q.symbols.size(); ++i) {
    const auto& t = tables[i / (h * w)];
    const auto v = static_cast<std::uint32_t>(rng.below(kTotal));
    const int k = static_cast<int>(std::upper_bound(t.cdf.begin(), t.cdf.end(), v) - t.cdf.begin()) - 1;
    q.symbols[i] = k + kSymMin;
  }
  return q;
}

inline std::vector<CdfTable> random_tables(Rng& rng, int c) {
  ChannelModel m;
  for (int i = 0; i < c; ++i) {
    m.mu.push_back(0.0f);
    m.log_sigma.push_back(static_cast<float>(rng.uniform(std::log(0.01), std::log(20.0))));
  }
  return m.tables();
}

}  // namespace realcam::oracle
