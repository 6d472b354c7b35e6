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

// Finite-difference verification of the autodiff op catalog.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "realcam/autodiff.hpp"
#include "realcam/entropy.hpp"
#include "realcam/rng.hpp"

namespace realcam::ad {

struct GradCheckCase {
  std::string op;
  // One shape list per trial pattern; trial t uses shapes[t % shapes.size()].
  std::vector<std::vector<Shape>> shapes;
  // Sampled inputs satisfy |x| >= min_abs, keeping clear of kinks.
  double min_abs = 0.0;
  std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)> build;
};

struct GradCheckResult {
  std::string op;
  int trials = 0;
  double max_rel_err = 0.0;
};

namespace detail {

inline Tensor<double> random_tensor(const Shape& s, double min_abs, Rng& rng) {
  Tensor<double> t(s);
  for (auto& v : t.vec()) {
    if (min_abs > 0.0) {
      const double mag = rng.uniform(min_abs, 1.0);
      v = rng.uniform() < 0.5 ? -mag : mag;
    } else {
      v = rng.uniform(-1.0, 1.0);
    }
  }
  return t;
}

// Scalar probe: sum(weights * f(inputs)).
inline double probe(const GradCheckCase& c, const std::vector<Tensor<double>>& inputs,
                    const Tensor<double>& weights) {
  Tape<double> tape;
  std::vector<Var<double>> vs;
  for (const auto& in : inputs) vs.push_back(tape.constant(in));
  const Tensor<double>& out = c.build(tape, vs).value();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
  return s;
}

}  // namespace detail

// Relative error between analytic and central-difference gradients,
// measured per input tensor as ||a - n|| / max(||a||, ||n||) and maximised
// over inputs and trials. Step 1e-5, 64-bit.
inline GradCheckResult grad_check(const GradCheckCase& c, int trials, std::uint64_t seed = 1) {
  constexpr double kStep = 1e-5;
  GradCheckResult res{c.op, trials, 0.0};
  Rng rng(derive_seed(seed, fnv1a64(c.op)));
  for (int trial = 0; trial < trials; ++trial) {
    const auto& shapes = c.shapes[static_cast<std::size_t>(trial) % c.shapes.size()];
    std::vector<Tensor<double>> inputs;
    for (const auto& s : shapes) inputs.push_back(detail::random_tensor(s, c.min_abs, rng));

    Tape<double> tape;
    std::vector<Var<double>> vs;
    for (const auto& in : inputs) vs.push_back(tape.leaf(in));
    Var<double> out = c.build(tape, vs);
    Tensor<double> weights = detail::random_tensor(out.shape(), 0.0, rng);
    Var<double> loss = sum(mul(out, tape.constant(weights)));
    tape.backward(loss);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor<double> analytic = tape.grad(vs[k]);
      double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t e = 0; e < inputs[k].size(); ++e) {
        const double x0 = inputs[k][e];
        inputs[k][e] = x0 + kStep;
        const double fp = detail::probe(c, inputs, weights);
        inputs[k][e] = x0 - kStep;
        const double fm = detail::probe(c, inputs, weights);
        inputs[k][e] = x0;
        const double numeric = (fp - fm) / (2.0 * kStep);
        diff2 += (analytic[e] - numeric) * (analytic[e] - numeric);
        a2 += analytic[e] * analytic[e];
        n2 += numeric * numeric;
      }
      const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
      res.max_rel_err = std::max(res.max_rel_err, std::sqrt(diff2) / denom);
    }
  }
  return res;
}

// One case per op of the differentiable catalog.
inline std::vector<GradCheckCase> op_catalog() {
  using V = Var<double>;
  using Vs = std::vector<V>;
  using Tp = Tape<double>;
  std::vector<GradCheckCase> cases;
  const std::vector<std::vector<Shape>> small{{{3}}, {{4}}, {{5}}};
  const std::vector<std::vector<Shape>> small2{{{3}, {3}}, {{4}, {4}}, {{5}, {5}}};

  cases.push_back({"conv2d",
                   {{{2, 2, 4, 4}, {3, 2, 3, 3}, {3}}, {{1, 3, 5, 5}, {2, 3, 1, 1}, {2}}},
                   0.0,
                   [](Tp&, const Vs& v) { return conv2d(v[0], v[1], v[2], 1); }});
  cases.push_back({"conv2d-stride2",
                   {{{2, 2, 4, 4}, {3, 2, 3, 3}, {3}}, {{1, 2, 5, 5}, {2, 2, 3, 3}, {2}}},
                   0.0,
                   [](Tp&, const Vs& v) { return conv2d(v[0], v[1], v[2], 2); }});
  cases.push_back({"relu", small, 0.1, [](Tp&, const Vs& v) { return relu(v[0]); }});
  cases.push_back({"sigmoid", small, 0.0, [](Tp&, const Vs& v) { return sigmoid(v[0]); }});
  cases.push_back({"add", small2, 0.0, [](Tp&, const Vs& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", small2, 0.0, [](Tp&, const Vs& v) { return sub(v[0], v[1]); }});
  cases.push_back(
      {"elementwise-mul", small2, 0.0, [](Tp&, const Vs& v) { return mul(v[0], v[1]); }});
  cases.push_back({"scalar-affine",
                   {{{3}, {1}, {1}}, {{4}, {1}, {1}}, {{5}, {1}, {1}}},
                   0.0,
                   [](Tp&, const Vs& v) { return affine(v[0], v[1], v[2]); }});
  cases.push_back({"channel-affine",
                   {{{2, 3, 2, 2}, {2, 3}, {2, 3}}},
                   0.0,
                   [](Tp&, const Vs& v) { return channel_affine(v[0], v[1], v[2]); }});
  cases.push_back({"matmul",
                   {{{2, 3, 4}, {2, 4, 2}}, {{3, 2}, {2, 4}}},
                   0.0,
                   [](Tp&, const Vs& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"matmul-transposed",
                   {{{2, 3, 4}, {2, 5, 4}}},
                   0.0,
                   [](Tp&, const Vs& v) { return matmul(v[0], v[1], true); }});
  cases.push_back({"softmax",
                   {{{4}}, {{2, 5}}, {{3, 3}}},
                   0.0,
                   [](Tp&, const Vs& v) { return softmax(v[0]); }});
  cases.push_back({"layernorm",
                   {{{2, 4, 2, 1}, {4}, {4}}, {{1, 3, 1, 2}, {3}, {3}}},
                   0.0,
                   [](Tp&, const Vs& v) { return layernorm(v[0], v[1], v[2]); }});
  cases.push_back({"global-avg-pool",
                   {{{2, 2, 2, 2}}, {{1, 3, 1, 4}}},
                   0.0,
                   [](Tp&, const Vs& v) { return global_avg_pool(v[0]); }});
  cases.push_back({"area-downsample",
                   {{{1, 2, 4, 4}}},
                   0.0,
                   [](Tp&, const Vs& v) { return area_downsample(v[0], 2); }});
  cases.push_back({"concat",
                   {{{2, 1, 2}, {2, 2, 2}}},
                   0.0,
                   [](Tp&, const Vs& v) { return concat(Vs{v[0], v[1]}); }});
  cases.push_back({"split",
                   {{{2, 3, 2}}},
                   0.0,
                   [](Tp&, const Vs& v) {
                     auto parts = split(v[0], {1, 2});
                     return concat(Vs{parts[1], parts[0]});
                   }});
  cases.push_back({"space-to-depth",
                   {{{1, 4, 4}}, {{1, 2, 2, 4}}},
                   0.0,
                   [](Tp&, const Vs& v) { return space_to_depth(v[0], 2); }});
  cases.push_back({"depth-to-space",
                   {{{4, 2, 2}}, {{1, 8, 1, 2}}},
                   0.0,
                   [](Tp&, const Vs& v) { return depth_to_space(v[0], 2); }});
  cases.push_back({"window-partition",
                   {{{1, 4, 4, 4}}},
                   0.0,
                   [](Tp&, const Vs& v) { return window_partition(v[0], 2, 2); }});
  cases.push_back({"window-merge",
                   {{{8, 4, 2}}},
                   0.0,
                   [](Tp&, const Vs& v) { return window_merge(v[0], 1, 4, 4, 4, 2, 2); }});
  cases.push_back({"reshape",
                   {{{2, 3}}},
                   0.0,
                   [](Tp&, const Vs& v) { return reshape(v[0], Shape{3, 2}); }});
  cases.push_back({"mse", small2, 0.0, [](Tp&, const Vs& v) { return mse(v[0], v[1]); }});
  cases.push_back({"sum", small, 0.0, [](Tp&, const Vs& v) { return sum(v[0]); }});
  cases.push_back({"gaussian-rate",
                   {{{2, 3, 2, 2}, {3}, {3}}},
                   0.0,
                   [](Tp&, const Vs& v) {
                     return entropy::gaussian_rate(scale(v[0], 3.0), v[1], v[2]);
                   }});
  return cases;
}

inline GradCheckResult grad_check(std::string_view op, int trials, std::uint64_t seed = 1) {
  for (const auto& c : op_catalog()) {
    if (c.op == op) return grad_check(c, trials, seed);
  }
  throw ShapeError("grad_check: unknown op kind '" + std::string(op) + "'");
}

}  // namespace realcam::ad
