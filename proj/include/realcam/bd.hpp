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

// Bjontegaard deltas between two rate-distortion curves.
//
// Classical method: fit a cubic polynomial of the metric against log rate
// (and of log rate against the metric for BD-Rate), integrate both fits over
// the overlapping interval and compare the averages. A piecewise cubic
// Hermite variant is available through BdMethod::pchip.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "realcam/errors.hpp"

namespace realcam::bd {

enum class BdMethod { cubic, pchip };

inline std::string method_name(BdMethod m) { return m == BdMethod::cubic ? "cubic" : "pchip"; }

struct Curve {
  std::vector<double> rate;    // bits per pixel, > 0
  std::vector<double> metric;  // quality, higher is better (negate for distortion-like axes)
};

struct BdResult {
  double value = 0.0;
  bool non_monotone_fit = false;
};

namespace detail {

inline void check_curve(const Curve& c, const char* which) {
  if (c.rate.size() != c.metric.size()) throw ConfigError(std::string("bd: ") + which + " rate/metric length mismatch");
  if (c.rate.size() < 3) {
    throw ConfigError(std::string("bd: ") + which + " curve needs at least 3 points, got " +
                      std::to_string(c.rate.size()));
  }
  for (double r : c.rate) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError(std::string("bd: ") + which + " rate must be positive");
  }
  for (double m : c.metric) {
    if (!std::isfinite(m)) throw ConfigError(std::string("bd: ") + which + " metric not finite");
  }
}

// Least-squares cubic (degree min(3, n-1)), coefficients low to high.
inline Eigen::VectorXd polyfit(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  const int deg = std::min(3, n - 1);
  Eigen::MatrixXd A(n, deg + 1);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    double p = 1;
    for (int d = 0; d <= deg; ++d, p *= x[i]) A(i, d) = p;
    b(i) = y[i];
  }
  return A.colPivHouseholderQr().solve(b);
}

inline double poly_integral(const Eigen::VectorXd& c, double lo, double hi) {
  double s = 0;
  for (int d = 0; d < c.size(); ++d) s += c(d) / (d + 1) * (std::pow(hi, d + 1) - std::pow(lo, d + 1));
  return s;
}

inline bool poly_monotone(const Eigen::VectorXd& c, double lo, double hi) {
  // Sample the derivative densely; a sign change marks a non-monotone fit.
  int sign = 0;
  for (int i = 0; i <= 200; ++i) {
    const double x = lo + (hi - lo) * i / 200.0;
    double d = 0, p = 1;
    for (int k = 1; k < c.size(); ++k, p *= x) d += k * c(k) * p;
    const int s = d > 1e-12 ? 1 : (d < -1e-12 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

// Monotone piecewise cubic Hermite (Fritsch-Carlson) integral over [lo, hi].
inline double pchip_integral(std::vector<double> x, std::vector<double> y, double lo, double hi) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> xs, ys;
  for (auto i : idx) {
    xs.push_back(x[i]);
    ys.push_back(y[i]);
  }
  const std::size_t n = xs.size();
  std::vector<double> h(n - 1), delta(n - 1), m(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = xs[i + 1] - xs[i];
    if (h[i] <= 0) throw ConfigError("bd: duplicate rate points");
    delta[i] = (ys[i + 1] - ys[i]) / h[i];
  }
  m[0] = delta[0];
  m[n - 1] = delta[n - 2];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (delta[i - 1] * delta[i] <= 0) {
      m[i] = 0;
    } else {
      const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
      m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
  }
  // Integrate each Hermite segment clipped to [lo, hi] with 5-point Gauss-Legendre.
  static const double gx[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
  static const double gw[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665, 0.2369268850561891};
  double total = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = std::max(lo, xs[i]), b = std::min(hi, xs[i + 1]);
    if (b <= a) continue;
    for (int k = 0; k < 5; ++k) {
      const double t0 = 0.5 * (b - a) * gx[k] + 0.5 * (a + b);
      const double t = (t0 - xs[i]) / h[i];
      const double h00 = 2 * t * t * t - 3 * t * t + 1, h10 = t * t * t - 2 * t * t + t;
      const double h01 = -2 * t * t * t + 3 * t * t, h11 = t * t * t - t * t;
      const double v = h00 * ys[i] + h10 * h[i] * m[i] + h01 * ys[i + 1] + h11 * h[i] * m[i + 1];
      total += 0.5 * (b - a) * gw[k] * v;
    }
  }
  return total;
}

// Average of (test - anchor) of y over the overlap of the x ranges.
inline BdResult average_gap(const std::vector<double>& xa, const std::vector<double>& ya,
                            const std::vector<double>& xt, const std::vector<double>& yt, BdMethod m) {
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xt.begin(), xt.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xt.begin(), xt.end()));
  if (!(hi > lo)) throw ConfigError("bd: curves do not overlap");
  BdResult r;
  if (m == BdMethod::cubic) {
    const auto ca = polyfit(xa, ya), ct = polyfit(xt, yt);
    r.value = (poly_integral(ct, lo, hi) - poly_integral(ca, lo, hi)) / (hi - lo);
    r.non_monotone_fit = !poly_monotone(ca, lo, hi) || !poly_monotone(ct, lo, hi);
  } else {
    r.value = (pchip_integral(xt, yt, lo, hi) - pchip_integral(xa, ya, lo, hi)) / (hi - lo);
  }
  return r;
}

inline std::vector<double> logs(const std::vector<double>& r) {
  std::vector<double> o;
  for (double v : r) o.push_back(std::log(v));
  return o;
}

}  // namespace detail

// Average metric gain of `test` over `anchor` at equal rate (BD-PSNR style).
inline BdResult bd_metric(const Curve& anchor, const Curve& test, BdMethod m = BdMethod::cubic) {
  detail::check_curve(anchor, "anchor");
  detail::check_curve(test, "test");
  return detail::average_gap(detail::logs(anchor.rate), anchor.metric, detail::logs(test.rate), test.metric, m);
}

// Average rate change of `test` against `anchor` at equal quality, in percent.
inline BdResult bd_rate(const Curve& anchor, const Curve& test, BdMethod m = BdMethod::cubic) {
  detail::check_curve(anchor, "anchor");
  detail::check_curve(test, "test");
  BdResult r = detail::average_gap(anchor.metric, detail::logs(anchor.rate), test.metric, detail::logs(test.rate), m);
  r.value = (std::exp(r.value) - 1.0) * 100.0;
  return r;
}

}  // namespace realcam::bd
