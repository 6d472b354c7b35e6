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

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape owns every value produced during one forward pass. Ops are free
// functions taking Var handles; each op validates shapes, computes its
// output eagerly, and appends a backward closure when any input requires a
// gradient. A tape is single-use: after backward() it cannot record again.
//
// Spatial tensors are laid out [N, C, H, W]. There is no implicit
// broadcasting; the only broadcasting ops are affine (scalar) and
// channel_affine (per sample, per channel).

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "realcam/errors.hpp"
#include "realcam/tensor.hpp"

namespace realcam::ad {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  int dim(int i) const { return value().dim(i); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> v, bool requires_grad = true) {
    ensure_open("leaf");
    check_finite("leaf", v);
    nodes_.push_back(Node{std::move(v), {}, requires_grad, "leaf", nullptr});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  // Appends an op result. `fn` is kept only when some input requires a
  // gradient; it receives the output gradient and accumulates into inputs.
  Var<T> record(const char* op, Tensor<T> out, std::initializer_list<Var<T>> inputs,
                Backward fn) {
    return record(op, std::move(out), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> record(const char* op, Tensor<T> out, const std::vector<Var<T>>& inputs,
                Backward fn) {
    ensure_open(op);
    bool rg = false;
    for (const auto& v : inputs) {
      if (v.tape != this) throw TapeError(std::string(op) + ": input belongs to another tape");
      rg = rg || nodes_[v.id].requires_grad;
    }
    check_finite(op, out);
    nodes_.push_back(Node{std::move(out), {}, rg, op, rg ? std::move(fn) : Backward{}});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  const char* op_name(Var<T> v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return backward_done_; }

  // Gradient accumulator of a node, zero-initialised on first access.
  Tensor<T>& grad_buffer(Var<T> v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw TapeError("backward: loss belongs to another tape");
    if (backward_done_) throw TapeError("backward: tape already consumed; run a new forward pass");
    Node& ln = nodes_.at(loss.id);
    if (ln.value.size() != 1) {
      throw TapeError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape()));
    }
    if (!ln.requires_grad) throw TapeError("backward: loss is not attached to any gradient leaf");
    backward_done_ = true;
    grad_buffer(loss)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // The closure may touch other nodes, so copy the handle first.
      Backward fn = n.backward;
      fn(*this, nodes_[i].grad);
    }
  }

  // Gradient of a node after backward(); zeros when it did not contribute.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    const char* op;
    Backward backward;
  };

  void ensure_open(const char* op) const {
    if (backward_done_) throw TapeError(std::string(op) + ": tape already consumed by backward()");
  }

  static void check_finite(const char* op, const Tensor<T>& t) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    if (Eigen::Map<const Arr>(t.data(), static_cast<Eigen::Index>(t.size())).allFinite()) return;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t[i])) {
        throw NonFiniteError(std::string(op) + ": non-finite output at flat index " +
                             std::to_string(i) + " of shape " + shape_str(t.shape()));
      }
    }
  }

  std::deque<Node> nodes_;  // deque: references stay valid as the tape grows
  bool backward_done_ = false;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <class T>
void same_tape(const char* op, Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw TapeError(std::string(op) + ": inputs on different tapes");
}

template <class T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline void valid_cols(int w, int kx, int stride, int pad, int wo, int& lo, int& hi) {
  const int off = kx - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = (w - 1 - off) < 0 ? 0 : (w - 1 - off) / stride + 1;
  if (hi > wo) hi = wo;
  if (lo > hi) lo = hi;
}

// x: [C, H, W] -> col: [C*k*k, Ho*Wo]
template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * ho * wo;
        int lo, hi;
        valid_cols(w, kx, stride, pad, wo, lo, hi);
        const int off = kx - pad;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * h + iy) * w + off;
          std::fill(dst, dst + lo, T(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + hi, dst + wo, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* x) {
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * ho * wo;
        int lo, hi;
        valid_cols(w, kx, stride, pad, wo, lo, hi);
        const int off = kx - pad;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(ci) * h + iy) * w + off;
          const T* src = row + oy * wo;
          if (stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, zero "same" padding (k/2), stride 1 or 2.
// x [N,Ci,H,W], w [Co,Ci,k,k] with odd k, b [Co] -> [N,Co,Ho,Wo] with
// Ho = floor((H + 2*(k/2) - k) / stride) + 1.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride = 1) {
  constexpr const char* op = "conv2d";
  detail::same_tape(op, x, w);
  detail::same_tape(op, x, b);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::require(xs.size() == 4, op, "input must be [N,C,H,W], got " + shape_str(xs));
  detail::require(ws.size() == 4 && ws[2] == ws[3] && ws[2] % 2 == 1, op,
                  "weight must be [Co,Ci,k,k] with odd k, got " + shape_str(ws));
  detail::require(ws[1] == xs[1], op,
                  "input channels " + std::to_string(xs[1]) + " != weight in-channels " +
                      std::to_string(ws[1]));
  detail::require(b.shape() == Shape{ws[0]}, op,
                  "bias must be [" + std::to_string(ws[0]) + "], got " + shape_str(b.shape()));
  detail::require(stride == 1 || stride == 2, op, "stride must be 1 or 2");
  const int n = xs[0], ci = xs[1], h = xs[2], wd = xs[3];
  const int co = ws[0], k = ws[2], pad = k / 2;
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  const int kk = ci * k * k, p = ho * wo;
  const bool direct = (k == 1 && stride == 1);

  Tensor<T> out(Shape{n, co, ho, wo});
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(kk) * p);
  detail::CMapMat<T> W(w.value().data(), co, kk);
  const T* bias = b.value().data();
  for (int s = 0; s < n; ++s) {
    const T* xn = x.value().data() + static_cast<std::size_t>(s) * ci * h * wd;
    if (!direct) detail::im2col(xn, ci, h, wd, k, stride, pad, ho, wo, col.data());
    detail::CMapMat<T> C(direct ? xn : col.data(), kk, p);
    detail::MapMat<T> O(out.data() + static_cast<std::size_t>(s) * co * p, co, p);
    O.noalias() = W * C;
    for (int o = 0; o < co; ++o) O.row(o).array() += bias[o];
  }
  return x.tape->record(op, std::move(out), {x, w, b},
                        [=](Tape<T>& t, const Tensor<T>& g) {
    const bool gx_on = t.requires_grad(x), gw_on = t.requires_grad(w), gb_on = t.requires_grad(b);
    std::vector<T> colb(direct ? 0 : static_cast<std::size_t>(kk) * p);
    std::vector<T> gcol(static_cast<std::size_t>(kk) * p);
    detail::CMapMat<T> Wb(t.value(w).data(), co, kk);
    for (int s = 0; s < n; ++s) {
      detail::CMapMat<T> G(g.data() + static_cast<std::size_t>(s) * co * p, co, p);
      const T* xn = t.value(x).data() + static_cast<std::size_t>(s) * ci * h * wd;
      if (gw_on) {
        if (!direct) detail::im2col(xn, ci, h, wd, k, stride, pad, ho, wo, colb.data());
        detail::CMapMat<T> C(direct ? xn : colb.data(), kk, p);
        detail::MapMat<T> GW(t.grad_buffer(w).data(), co, kk);
        GW.noalias() += G * C.transpose();
      }
      if (gb_on) {
        // Plain loop: Eigen's vectorised sum peels by address alignment,
        // which would make the result depend on where the buffer landed.
        T* gb = t.grad_buffer(b).data();
        const T* gs = g.data() + static_cast<std::size_t>(s) * co * p;
        for (int o = 0; o < co; ++o) {
          T acc = 0;
          for (int q = 0; q < p; ++q) acc += gs[static_cast<std::size_t>(o) * p + q];
          gb[o] += acc;
        }
      }
      if (gx_on) {
        T* gx = t.grad_buffer(x).data() + static_cast<std::size_t>(s) * ci * h * wd;
        if (direct) {
          detail::MapMat<T> GX(gx, kk, p);
          GX.noalias() += Wb.transpose() * G;
        } else {
          detail::MapMat<T> GC(gcol.data(), kk, p);
          GC.noalias() = Wb.transpose() * G;
          detail::col2im_add(gcol.data(), ci, h, wd, k, stride, pad, ho, wo, gx);
        }
      }
    }
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  return x.tape->record("relu", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = T(1) / (T(1) + std::exp(-v));
  const int yid = static_cast<int>(x.tape->size());
  return x.tape->record("sigmoid", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& yv = t.value(Var<T>{&t, yid});
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape("add", a, b);
  detail::require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_tape("sub", a, b);
  detail::require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape("elementwise-mul", a, b);
  detail::require_same_shape("elementwise-mul", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("elementwise-mul", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bw = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bw[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

// y = alpha * x + beta with learnable scalars alpha, beta of shape [1].
template <class T>
Var<T> affine(Var<T> x, Var<T> alpha, Var<T> beta) {
  constexpr const char* op = "scalar-affine";
  detail::same_tape(op, x, alpha);
  detail::same_tape(op, x, beta);
  detail::require(alpha.shape() == Shape{1} && beta.shape() == Shape{1}, op,
                  "alpha and beta must have shape [1]");
  const T a = alpha.value()[0], c = beta.value()[0];
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = a * v + c;
  return x.tape->record(op, std::move(out), {x, alpha, beta},
                        [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    if (t.requires_grad(x)) {
      const T av = t.value(alpha)[0];
      Tensor<T>& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += av * g[i];
    }
    if (t.requires_grad(alpha)) {
      T s = 0;
      for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * xv[i];
      t.grad_buffer(alpha)[0] += s;
    }
    if (t.requires_grad(beta)) {
      T s = 0;
      for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
      t.grad_buffer(beta)[0] += s;
    }
  });
}

// y = s * x + offset with constant coefficients.
template <class T>
Var<T> scale(Var<T> x, double s, double offset = 0.0) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = T(s) * v + T(offset);
  return x.tape->record("scale", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += T(s) * g[i];
  });
}

// Per-sample, per-channel affine: x [N,C,...], alpha/beta [N,C].
// An invalid `beta` handle means no shift.
template <class T>
Var<T> channel_affine(Var<T> x, Var<T> alpha, Var<T> beta = {}) {
  constexpr const char* op = "channel-affine";
  detail::same_tape(op, x, alpha);
  const Shape& xs = x.shape();
  detail::require(xs.size() >= 2, op, "input rank must be >= 2, got " + shape_str(xs));
  const Shape want{xs[0], xs[1]};
  detail::require(alpha.shape() == want, op,
                  "alpha must be " + shape_str(want) + ", got " + shape_str(alpha.shape()));
  const bool has_beta = beta.valid();
  if (has_beta) {
    detail::same_tape(op, x, beta);
    detail::require(beta.shape() == want, op,
                    "beta must be " + shape_str(want) + ", got " + shape_str(beta.shape()));
  }
  const std::size_t inner = x.value().size() / (static_cast<std::size_t>(xs[0]) * xs[1]);
  const std::size_t nc = static_cast<std::size_t>(xs[0]) * xs[1];
  Tensor<T> out = x.value();
  for (std::size_t q = 0; q < nc; ++q) {
    const T a = alpha.value()[q];
    const T c = has_beta ? beta.value()[q] : T(0);
    T* p = out.data() + q * inner;
    for (std::size_t i = 0; i < inner; ++i) p[i] = a * p[i] + c;
  }
  std::vector<Var<T>> ins{x, alpha};
  if (has_beta) ins.push_back(beta);
  return x.tape->record(op, std::move(out), ins, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& av = t.value(alpha);
    for (std::size_t q = 0; q < nc; ++q) {
      const T* gp = g.data() + q * inner;
      const T* xp = xv.data() + q * inner;
      if (t.requires_grad(x)) {
        T* gx = t.grad_buffer(x).data() + q * inner;
        for (std::size_t i = 0; i < inner; ++i) gx[i] += av[q] * gp[i];
      }
      if (t.requires_grad(alpha)) {
        T s = 0;
        for (std::size_t i = 0; i < inner; ++i) s += gp[i] * xp[i];
        t.grad_buffer(alpha)[q] += s;
      }
      if (has_beta && t.requires_grad(beta)) {
        T s = 0;
        for (std::size_t i = 0; i < inner; ++i) s += gp[i];
        t.grad_buffer(beta)[q] += s;
      }
    }
  });
}

// Batched matrix product. a [B,M,K] (or [M,K]), b [B,K,N]; with trans_b,
// b is [B,N,K] and the product uses its transpose.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_b = false) {
  constexpr const char* op = "matmul";
  detail::same_tape(op, a, b);
  Shape as = a.shape(), bs = b.shape();
  detail::require(as.size() == bs.size() && (as.size() == 2 || as.size() == 3), op,
                  "operands must both be rank 2 or 3, got " + shape_str(as) + " and " +
                      shape_str(bs));
  const bool batched = as.size() == 3;
  const int batch = batched ? as[0] : 1;
  if (batched) detail::require(bs[0] == batch, op, "batch dims differ: " + shape_str(as) +
                                                       " vs " + shape_str(bs));
  const int m = as[as.size() - 2], kd = as[as.size() - 1];
  const int bk = trans_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
  const int nd = trans_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
  detail::require(bk == kd, op, "inner dims differ: " + shape_str(as) + " x " + shape_str(bs) +
                                    (trans_b ? " (transposed)" : ""));
  Shape os = batched ? Shape{batch, m, nd} : Shape{m, nd};
  Tensor<T> out(os);
  const std::size_t sa = static_cast<std::size_t>(m) * kd, sb = static_cast<std::size_t>(kd) * nd,
                    so = static_cast<std::size_t>(m) * nd;
  for (int q = 0; q < batch; ++q) {
    detail::CMapMat<T> A(a.value().data() + q * sa, m, kd);
    detail::MapMat<T> O(out.data() + q * so, m, nd);
    if (trans_b) {
      detail::CMapMat<T> B(b.value().data() + q * sb, nd, kd);
      O.noalias() = A * B.transpose();
    } else {
      detail::CMapMat<T> B(b.value().data() + q * sb, kd, nd);
      O.noalias() = A * B;
    }
  }
  return a.tape->record(op, std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    for (int q = 0; q < batch; ++q) {
      detail::CMapMat<T> G(g.data() + q * so, m, nd);
      detail::CMapMat<T> A(t.value(a).data() + q * sa, m, kd);
      if (trans_b) {
        detail::CMapMat<T> B(t.value(b).data() + q * sb, nd, kd);
        if (t.requires_grad(a)) {
          detail::MapMat<T> GA(t.grad_buffer(a).data() + q * sa, m, kd);
          GA.noalias() += G * B;
        }
        if (t.requires_grad(b)) {
          detail::MapMat<T> GB(t.grad_buffer(b).data() + q * sb, nd, kd);
          GB.noalias() += G.transpose() * A;
        }
      } else {
        detail::CMapMat<T> B(t.value(b).data() + q * sb, kd, nd);
        if (t.requires_grad(a)) {
          detail::MapMat<T> GA(t.grad_buffer(a).data() + q * sa, m, kd);
          GA.noalias() += G * B.transpose();
        }
        if (t.requires_grad(b)) {
          detail::MapMat<T> GB(t.grad_buffer(b).data() + q * sb, kd, nd);
          GB.noalias() += A.transpose() * G;
        }
      }
    }
  });
}

// Softmax over the last dimension.
template <class T>
Var<T> softmax(Var<T> x) {
  const int len = x.dim(-1);
  const std::size_t rows = x.value().size() / len;
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = out.data() + r * len;
    const T mx = *std::max_element(p, p + len);
    T s = 0;
    for (int i = 0; i < len; ++i) s += (p[i] = std::exp(p[i] - mx));
    for (int i = 0; i < len; ++i) p[i] /= s;
  }
  const int yid = static_cast<int>(x.tape->size());
  return x.tape->record("softmax", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(Var<T>{&t, yid});
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yp = y.data() + r * len;
      const T* gp = g.data() + r * len;
      T dot = 0;
      for (int i = 0; i < len; ++i) dot += yp[i] * gp[i];
      T* o = gx.data() + r * len;
      for (int i = 0; i < len; ++i) o[i] += yp[i] * (gp[i] - dot);
    }
  });
}

// Layer normalisation over the channel axis of [N,C,H,W] (per pixel), with
// per-channel gain and bias [C].
template <class T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
  constexpr const char* op = "layernorm";
  detail::same_tape(op, x, gamma);
  detail::same_tape(op, x, beta);
  const Shape& xs = x.shape();
  detail::require(xs.size() == 4, op, "input must be [N,C,H,W], got " + shape_str(xs));
  const int n = xs[0], c = xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  detail::require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, op,
                  "gamma/beta must be [" + std::to_string(c) + "]");
  Tensor<T> out(xs);
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * hw);
  const T* xv = x.value().data();
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  for (int s = 0; s < n; ++s) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = static_cast<std::size_t>(s) * c * hw + p;
      T mean = 0;
      for (int ch = 0; ch < c; ++ch) mean += xv[base + ch * hw];
      mean /= T(c);
      T var = 0;
      for (int ch = 0; ch < c; ++ch) {
        const T d = xv[base + ch * hw] - mean;
        var += d * d;
      }
      var /= T(c);
      const T is = T(1) / std::sqrt(var + T(eps));
      (*inv)[static_cast<std::size_t>(s) * hw + p] = is;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = base + ch * hw;
        const T xh = (xv[i] - mean) * is;
        (*xhat)[i] = xh;
        out[i] = gm[ch] * xh + bt[ch];
      }
    }
  }
  return x.tape->record(op, std::move(out), {x, gamma, beta},
                        [=](Tape<T>& t, const Tensor<T>& g) {
    const T* gmv = t.value(gamma).data();
    const bool gx_on = t.requires_grad(x);
    T* gg = t.requires_grad(gamma) ? t.grad_buffer(gamma).data() : nullptr;
    T* gb = t.requires_grad(beta) ? t.grad_buffer(beta).data() : nullptr;
    T* gx = gx_on ? t.grad_buffer(x).data() : nullptr;
    std::vector<T> gxh(c);
    for (int s = 0; s < n; ++s) {
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t base = static_cast<std::size_t>(s) * c * hw + p;
        T m1 = 0, m2 = 0;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = base + ch * hw;
          if (gg) gg[ch] += g[i] * (*xhat)[i];
          if (gb) gb[ch] += g[i];
          gxh[ch] = g[i] * gmv[ch];
          m1 += gxh[ch];
          m2 += gxh[ch] * (*xhat)[i];
        }
        if (!gx_on) continue;
        m1 /= T(c);
        m2 /= T(c);
        const T is = (*inv)[static_cast<std::size_t>(s) * hw + p];
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = base + ch * hw;
          gx[i] += is * (gxh[ch] - m1 - (*xhat)[i] * m2);
        }
      }
    }
  });
}

// [N,C,H,W] -> [N,C]
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  constexpr const char* op = "global-avg-pool";
  const Shape& xs = x.shape();
  detail::require(xs.size() == 4, op, "input must be [N,C,H,W], got " + shape_str(xs));
  const std::size_t nc = static_cast<std::size_t>(xs[0]) * xs[1];
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  Tensor<T> out(Shape{xs[0], xs[1]});
  for (std::size_t q = 0; q < nc; ++q) {
    T s = 0;
    const T* p = x.value().data() + q * hw;
    for (std::size_t i = 0; i < hw; ++i) s += p[i];
    out[q] = s / T(hw);
  }
  return x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t q = 0; q < nc; ++q) {
      const T v = g[q] / T(hw);
      T* p = gx.data() + q * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += v;
    }
  });
}

// Box-average downsampling by an integer factor: [N,C,H,W] -> [N,C,H/f,W/f].
template <class T>
Var<T> area_downsample(Var<T> x, int f) {
  constexpr const char* op = "area-downsample";
  const Shape& xs = x.shape();
  detail::require(xs.size() == 4, op, "input must be [N,C,H,W], got " + shape_str(xs));
  detail::require(f >= 1 && xs[2] % f == 0 && xs[3] % f == 0, op,
                  "factor " + std::to_string(f) + " must divide spatial dims of " + shape_str(xs));
  const int nc = xs[0] * xs[1], h = xs[2], w = xs[3], ho = h / f, wo = w / f;
  Tensor<T> out(Shape{xs[0], xs[1], ho, wo});
  const T norm = T(1) / T(f * f);
  for (int q = 0; q < nc; ++q) {
    const T* src = x.value().data() + static_cast<std::size_t>(q) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(q) * ho * wo;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) dst[(y / f) * wo + xx / f] += src[y * w + xx];
    }
    for (int i = 0; i < ho * wo; ++i) dst[i] *= norm;
  }
  return x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (int q = 0; q < nc; ++q) {
      const T* gs = g.data() + static_cast<std::size_t>(q) * ho * wo;
      T* gd = gx.data() + static_cast<std::size_t>(q) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) gd[y * w + xx] += gs[(y / f) * wo + xx / f] * norm;
      }
    }
  });
}

// Concatenation along axis 1.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  constexpr const char* op = "concat";
  detail::require(!xs.empty(), op, "no inputs");
  Shape os = xs[0].shape();
  detail::require(os.size() >= 2, op, "inputs must have rank >= 2");
  int total = 0;
  for (const auto& v : xs) {
    detail::same_tape(op, xs[0], v);
    Shape s = v.shape();
    detail::require(s.size() == os.size(), op, "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i == 1) continue;
      detail::require(s[i] == os[i], op,
                      "dim " + std::to_string(i) + " mismatch: " + shape_str(s) + " vs " +
                          shape_str(os));
    }
    total += s[1];
  }
  os[1] = total;
  const int n = os[0];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < os.size(); ++i) inner *= os[i];
  Tensor<T> out(os);
  int off = 0;
  std::vector<int> offs;
  for (const auto& v : xs) {
    const int c = v.dim(1);
    offs.push_back(off);
    for (int s = 0; s < n; ++s) {
      const T* src = v.value().data() + static_cast<std::size_t>(s) * c * inner;
      T* dst = out.data() + (static_cast<std::size_t>(s) * total + off) * inner;
      std::copy(src, src + c * inner, dst);
    }
    off += c;
  }
  return xs[0].tape->record(op, std::move(out), xs, [=](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!t.requires_grad(xs[k])) continue;
      const int c = t.value(xs[k]).dim(1);
      Tensor<T>& gx = t.grad_buffer(xs[k]);
      for (int s = 0; s < n; ++s) {
        const T* src = g.data() + (static_cast<std::size_t>(s) * total + offs[k]) * inner;
        T* dst = gx.data() + static_cast<std::size_t>(s) * c * inner;
        for (std::size_t i = 0; i < c * inner; ++i) dst[i] += src[i];
      }
    }
  });
}

// Split along axis 1 into consecutive chunks of the given sizes.
template <class T>
std::vector<Var<T>> split(Var<T> x, const std::vector<int>& sizes) {
  constexpr const char* op = "split";
  const Shape xs = x.shape();
  detail::require(xs.size() >= 2, op, "input rank must be >= 2");
  int total = 0;
  for (int s : sizes) {
    detail::require(s > 0, op, "chunk sizes must be positive");
    total += s;
  }
  detail::require(total == xs[1], op,
                  "chunk sizes sum to " + std::to_string(total) + " but channel dim is " +
                      std::to_string(xs[1]));
  const int n = xs[0];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < xs.size(); ++i) inner *= xs[i];
  std::vector<Var<T>> outs;
  int off = 0;
  for (int c : sizes) {
    Shape os = xs;
    os[1] = c;
    Tensor<T> out(os);
    for (int s = 0; s < n; ++s) {
      const T* src = x.value().data() + (static_cast<std::size_t>(s) * total + off) * inner;
      std::copy(src, src + c * inner, out.data() + static_cast<std::size_t>(s) * c * inner);
    }
    outs.push_back(x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
      Tensor<T>& gx = t.grad_buffer(x);
      for (int s = 0; s < n; ++s) {
        const T* src = g.data() + static_cast<std::size_t>(s) * c * inner;
        T* dst = gx.data() + (static_cast<std::size_t>(s) * total + off) * inner;
        for (std::size_t i = 0; i < c * inner; ++i) dst[i] += src[i];
      }
    }));
    off += c;
  }
  return outs;
}

namespace detail {

// Index map shared by space-to-depth and depth-to-space on the last three
// dims: deep[(c*r*r + dy*r + dx), y, x] <-> shallow[c, y*r + dy, x*r + dx].
template <class F>
void for_each_s2d(std::size_t batch, int c, int h, int w, int r, F&& f) {
  const int ho = h / r, wo = w / r, co = c * r * r;
  for (std::size_t b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t shallow = ((b * c + ch) * h + y) * w + x;
          const int k = ch * r * r + (y % r) * r + (x % r);
          const std::size_t deep = ((b * co + k) * ho + y / r) * wo + x / r;
          f(shallow, deep);
        }
      }
    }
  }
}

}  // namespace detail

// [..., C, H, W] -> [..., C*r*r, H/r, W/r]; output channel c*r*r + k holds
// input phase (k / r, k % r) of channel c.
template <class T>
Var<T> space_to_depth(Var<T> x, int r = 2) {
  constexpr const char* op = "space-to-depth";
  const Shape& xs = x.shape();
  detail::require(xs.size() >= 3, op, "input rank must be >= 3, got " + shape_str(xs));
  const int c = x.dim(-3), h = x.dim(-2), w = x.dim(-1);
  detail::require(h % r == 0 && w % r == 0, op,
                  "spatial dims of " + shape_str(xs) + " not divisible by " + std::to_string(r));
  Shape os = xs;
  os[os.size() - 3] = c * r * r;
  os[os.size() - 2] = h / r;
  os[os.size() - 1] = w / r;
  const std::size_t batch = x.value().size() / (static_cast<std::size_t>(c) * h * w);
  Tensor<T> out(os);
  const T* src = x.value().data();
  detail::for_each_s2d(batch, c, h, w, r, [&](std::size_t s, std::size_t d) { out[d] = src[s]; });
  return x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    detail::for_each_s2d(batch, c, h, w, r, [&](std::size_t s, std::size_t d) { gx[s] += g[d]; });
  });
}

// Inverse of space_to_depth: [..., C, H, W] -> [..., C/(r*r), H*r, W*r].
template <class T>
Var<T> depth_to_space(Var<T> x, int r = 2) {
  constexpr const char* op = "depth-to-space";
  const Shape& xs = x.shape();
  detail::require(xs.size() >= 3, op, "input rank must be >= 3, got " + shape_str(xs));
  const int co = x.dim(-3), ho = x.dim(-2), wo = x.dim(-1);
  detail::require(co % (r * r) == 0, op,
                  "channels " + std::to_string(co) + " not divisible by " + std::to_string(r * r));
  const int c = co / (r * r), h = ho * r, w = wo * r;
  Shape os = xs;
  os[os.size() - 3] = c;
  os[os.size() - 2] = h;
  os[os.size() - 1] = w;
  const std::size_t batch = x.value().size() / (static_cast<std::size_t>(co) * ho * wo);
  Tensor<T> out(os);
  const T* src = x.value().data();
  detail::for_each_s2d(batch, c, h, w, r, [&](std::size_t s, std::size_t d) { out[s] = src[d]; });
  return x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    detail::for_each_s2d(batch, c, h, w, r, [&](std::size_t s, std::size_t d) { gx[d] += g[s]; });
  });
}

namespace detail {

// token layout: [(n, wy, wx, head), ty*ws + tx, d] <-> [n, head*dh + d, wy*ws + ty, wx*ws + tx]
template <class F>
void for_each_window(int n, int c, int h, int w, int ws, int heads, F&& f) {
  const int nwy = h / ws, nwx = w / ws, dh = c / heads, tokens = ws * ws;
  for (int s = 0; s < n; ++s)
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int hd = 0; hd < heads; ++hd) {
          const std::size_t b = ((static_cast<std::size_t>(s) * nwy + wy) * nwx + wx) * heads + hd;
          for (int ty = 0; ty < ws; ++ty)
            for (int tx = 0; tx < ws; ++tx)
              for (int d = 0; d < dh; ++d) {
                const std::size_t win = (b * tokens + ty * ws + tx) * dh + d;
                const std::size_t img =
                    ((static_cast<std::size_t>(s) * c + hd * dh + d) * h + wy * ws + ty) * w +
                    wx * ws + tx;
                f(img, win);
              }
        }
}

}  // namespace detail

// [N,C,H,W] -> [N * (H/ws) * (W/ws) * heads, ws*ws, C/heads]
template <class T>
Var<T> window_partition(Var<T> x, int ws, int heads) {
  constexpr const char* op = "window-partition";
  const Shape& xs = x.shape();
  detail::require(xs.size() == 4, op, "input must be [N,C,H,W], got " + shape_str(xs));
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  detail::require(ws > 0 && h % ws == 0 && w % ws == 0, op,
                  "window " + std::to_string(ws) + " does not divide spatial dims of " +
                      shape_str(xs));
  detail::require(heads > 0 && c % heads == 0, op,
                  "heads " + std::to_string(heads) + " do not divide channels " + std::to_string(c));
  Tensor<T> out(Shape{n * (h / ws) * (w / ws) * heads, ws * ws, c / heads});
  const T* src = x.value().data();
  detail::for_each_window(n, c, h, w, ws, heads,
                          [&](std::size_t img, std::size_t win) { out[win] = src[img]; });
  return x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    detail::for_each_window(n, c, h, w, ws, heads,
                            [&](std::size_t img, std::size_t win) { gx[img] += g[win]; });
  });
}

// Inverse of window_partition back to [N,C,H,W].
template <class T>
Var<T> window_merge(Var<T> x, int n, int c, int h, int w, int ws, int heads) {
  constexpr const char* op = "window-merge";
  detail::require(ws > 0 && h % ws == 0 && w % ws == 0 && heads > 0 && c % heads == 0, op,
                  "window/heads inconsistent with target dims");
  const Shape want{n * (h / ws) * (w / ws) * heads, ws * ws, c / heads};
  detail::require(x.shape() == want, op,
                  "expected " + shape_str(want) + ", got " + shape_str(x.shape()));
  Tensor<T> out(Shape{n, c, h, w});
  const T* src = x.value().data();
  detail::for_each_window(n, c, h, w, ws, heads,
                          [&](std::size_t img, std::size_t win) { out[img] = src[win]; });
  return x.tape->record(op, std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    detail::for_each_window(n, c, h, w, ws, heads,
                            [&](std::size_t img, std::size_t win) { gx[win] += g[img]; });
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  return x.tape->record("reshape", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// Mean of squared differences, shape [1].
template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  detail::same_tape("mse", a, b);
  detail::require_same_shape("mse", a, b);
  const std::size_t n = a.value().size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return a.tape->record("mse", Tensor<T>::scalar(s / T(n)), {a, b},
                        [=](Tape<T>& t, const Tensor<T>& g) {
    const T k = T(2) * g[0] / T(n);
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().values()) s += v;
  return x.tape->record("sum", Tensor<T>::scalar(s), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(x);
    for (auto& v : gx.vec()) v += g[0];
  });
}

}  // namespace realcam::ad
