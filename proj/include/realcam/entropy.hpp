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

// Factorised Gaussian entropy model: quantisation, per-symbol likelihoods,
// the differentiable rate term and the integer CDF tables the range coder
// shares between encoder and decoder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "realcam/autodiff.hpp"
#include "realcam/errors.hpp"
#include "realcam/rng.hpp"
#include "realcam/tensor.hpp"

namespace realcam::entropy {

inline constexpr int kSymMin = -64;
inline constexpr int kSymMax = 63;
inline constexpr int kAlphabet = kSymMax - kSymMin + 1;
inline constexpr int kPrecisionBits = 16;
inline constexpr std::uint32_t kTotal = 1u << kPrecisionBits;
inline constexpr double kSigmaFloor = 1e-2;
inline constexpr double kProbFloor = 1e-9;

inline double sigma_from_log(double log_sigma) { return std::max(std::exp(log_sigma), kSigmaFloor); }

// Standard normal CDF and upper tail via erfc; both are accurate far into
// their respective tails.
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double norm_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }
inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

// Mass of the unit bin centred at d = v - mu. Evaluated on the side of the
// mean where it does not cancel.
inline double bin_mass(double d, double sigma) {
  const double u = (d + 0.5) / sigma, l = (d - 0.5) / sigma;
  return d > 0 ? norm_sf(l) - norm_sf(u) : norm_cdf(u) - norm_cdf(l);
}

// Probability of mean-centred symbol s with both tails folded into the
// edge symbols, so the support sums to one.
inline double symbol_prob(int s, double sigma) {
  if (s < kSymMin || s > kSymMax) return 0.0;
  const double u = (s + 0.5) / sigma, l = (s - 0.5) / sigma;
  if (s == kSymMin) return norm_cdf(u);
  if (s == kSymMax) return norm_sf(l);
  return bin_mass(s, sigma);
}

// ---------------------------------------------------------------------------
// Quantisation

// Training proxy: additive U(-0.5, 0.5) noise, drawn from its own stream.
inline Tensor<float> uniform_noise(const Shape& shape, std::uint64_t seed) {
  Tensor<float> u(shape);
  Rng rng(seed);
  for (auto& v : u.vec()) v = static_cast<float>(rng.uniform() - 0.5);
  return u;
}

struct Quantized {
  Shape shape;                // [C,H,W]
  std::vector<int> symbols;   // mean-centred, within [kSymMin, kSymMax]
  std::size_t clamped = 0;    // symbols pulled back into the support
};

// s = round(y - mu) per channel, clamped to the support. y is [C,H,W].
inline Quantized quantize(const Tensor<float>& y, const std::vector<float>& mu) {
  if (y.rank() != 3 || static_cast<std::size_t>(y.dim(0)) != mu.size()) {
    throw ShapeError("quantize: latent " + shape_str(y.shape()) + " does not match " +
                     std::to_string(mu.size()) + " channel means");
  }
  Quantized q{y.shape(), std::vector<int>(y.size()), 0};
  const std::size_t plane = static_cast<std::size_t>(y.dim(1)) * y.dim(2);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = std::nearbyint(static_cast<double>(y[i]) - mu[i / plane]);
    int s = static_cast<int>(std::clamp(r, double(kSymMin) - 1, double(kSymMax) + 1));
    if (s < kSymMin || s > kSymMax) {
      s = std::clamp(s, kSymMin, kSymMax);
      ++q.clamped;
    }
    q.symbols[i] = s;
  }
  return q;
}

// y_hat = s + mu.
inline Tensor<float> dequantize(const Quantized& q, const std::vector<float>& mu) {
  Tensor<float> y(q.shape);
  const std::size_t plane = static_cast<std::size_t>(q.shape[1]) * q.shape[2];
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<float>(q.symbols[i]) + mu[i / plane];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Differentiable rate

// Total bits -sum log2 p(y) of y [N,C,H,W] (or [C,H,W]) under per-channel
// N(mu, sigma) discretised to unit bins, sigma = max(exp(log_sigma), floor).
// Returns shape [1]. Probabilities below kProbFloor are clamped and carry
// no gradient.
template <class T>
ad::Var<T> gaussian_rate(ad::Var<T> y, ad::Var<T> mu, ad::Var<T> log_sigma) {
  constexpr const char* op = "gaussian-rate";
  ad::detail::same_tape(op, y, mu);
  ad::detail::same_tape(op, y, log_sigma);
  const Shape ys = y.shape();
  ad::detail::require(ys.size() == 3 || ys.size() == 4, op, "latent must be rank 3 or 4, got " + shape_str(ys));
  const int cax = ys.size() == 4 ? 1 : 0;
  const int c = ys[cax];
  ad::detail::require(mu.shape() == Shape{c} && log_sigma.shape() == Shape{c}, op,
                      "mu/log_sigma must be [" + std::to_string(c) + "], got " +
                          shape_str(mu.shape()) + " and " + shape_str(log_sigma.shape()));
  const std::size_t n = ys.size() == 4 ? ys[0] : 1;
  const std::size_t plane = y.value().size() / (n * c);
  const Tensor<T>& yv = y.value();
  // Per element: d bits / d y and d bits / d log_sigma.
  std::vector<T> gy(yv.size()), gls(yv.size());
  double bits = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const double m = mu.value()[ch], ls = log_sigma.value()[ch];
      const double e = std::exp(ls);
      const bool floored = e < kSigmaFloor;
      const double sig = floored ? kSigmaFloor : e;
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = (s * c + ch) * plane + i;
        const double d = static_cast<double>(yv[idx]) - m;
        const double p = bin_mass(d, sig);
        if (p < kProbFloor) {
          bits += -std::log2(kProbFloor);
          continue;
        }
        bits += -std::log2(p);
        const double u = (d + 0.5) / sig, l = (d - 0.5) / sig;
        const double pu = norm_pdf(u), pl = norm_pdf(l);
        const double dp_dd = (pu - pl) / sig;
        const double dp_dls = floored ? 0.0 : -(u * pu - l * pl);
        const double k = -1.0 / (p * std::log(2.0));
        gy[idx] = static_cast<T>(k * dp_dd);
        gls[idx] = static_cast<T>(k * dp_dls);
      }
    }
  }
  return y.tape->record(op, Tensor<T>::scalar(static_cast<T>(bits)), {y, mu, log_sigma},
                        [=, gy = std::move(gy), gls = std::move(gls)](ad::Tape<T>& t, const Tensor<T>& g) {
    const T g0 = g[0];
    if (t.requires_grad(y)) {
      Tensor<T>& gyb = t.grad_buffer(y);
      for (std::size_t i = 0; i < gy.size(); ++i) gyb[i] += g0 * gy[i];
    }
    const bool gm = t.requires_grad(mu), gl = t.requires_grad(log_sigma);
    if (!gm && !gl) return;
    for (std::size_t s = 0; s < n; ++s) {
      for (int ch = 0; ch < c; ++ch) {
        T am = 0, al = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = (s * c + ch) * plane + i;
          am -= gy[idx];
          al += gls[idx];
        }
        if (gm) t.grad_buffer(mu)[ch] += g0 * am;
        if (gl) t.grad_buffer(log_sigma)[ch] += g0 * al;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Integer CDF tables

// Frequencies of the kAlphabet symbols for one channel, summing to kTotal,
// each at least 1. cdf[k] = sum of freq below symbol k; cdf[kAlphabet] = kTotal.
struct CdfTable {
  std::array<std::uint32_t, kAlphabet> freq{};
  std::array<std::uint32_t, kAlphabet + 1> cdf{};

  static CdfTable build(double sigma) {
    if (!(sigma >= kSigmaFloor) || !std::isfinite(sigma)) {
      throw ConfigError("cdf table: sigma " + std::to_string(sigma) + " below floor");
    }
    CdfTable t;
    constexpr std::uint32_t spread = kTotal - kAlphabet;
    std::uint32_t used = 0;
    int mode = 0;
    double best = -1.0;
    for (int k = 0; k < kAlphabet; ++k) {
      const double p = symbol_prob(k + kSymMin, sigma);
      t.freq[k] = 1 + static_cast<std::uint32_t>(std::floor(p * spread));
      used += t.freq[k];
      if (p > best) {
        best = p;
        mode = k;
      }
    }
    if (used > kTotal) throw Error("cdf table: frequency overflow");
    t.freq[mode] += kTotal - used;
    t.cdf[0] = 0;
    for (int k = 0; k < kAlphabet; ++k) {
      t.cdf[k + 1] = t.cdf[k] + t.freq[k];
      if (t.cdf[k + 1] <= t.cdf[k]) throw Error("cdf table: not strictly increasing");
    }
    if (t.cdf[kAlphabet] != kTotal) throw Error("cdf table: total mismatch");
    return t;
  }

  double prob(int s) const { return double(freq[s - kSymMin]) / kTotal; }
  double bits(int s) const { return -std::log2(prob(s)); }
};

// Per-channel entropy parameters as stored in the model.
struct ChannelModel {
  std::vector<float> mu;
  std::vector<float> log_sigma;

  std::size_t channels() const { return mu.size(); }
  std::vector<CdfTable> tables() const {
    std::vector<CdfTable> t;
    t.reserve(log_sigma.size());
    for (float ls : log_sigma) t.push_back(CdfTable::build(sigma_from_log(ls)));
    return t;
  }
};

// Information content of a quantised latent under the integer tables.
inline double table_bits(const Quantized& q, const std::vector<CdfTable>& tables) {
  const std::size_t plane = static_cast<std::size_t>(q.shape[1]) * q.shape[2];
  double b = 0;
  for (std::size_t i = 0; i < q.symbols.size(); ++i) b += tables[i / plane].bits(q.symbols[i]);
  return b;
}

}  // namespace realcam::entropy
