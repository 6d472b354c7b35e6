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

// RealCamNet at desk scale: encoder (coordinate-gated input stage, colour
// prior encoder, CIMC blocks) and decoder (upsampling + CSA stages).
//
// All feature maps are [N,C,H,W]. The model input is the RGGB-stacked crop
// at half the RAW resolution; the decoder returns RGB at full resolution.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "realcam/autodiff.hpp"
#include "realcam/checkpoint.hpp"
#include "realcam/config.hpp"
#include "realcam/errors.hpp"
#include "realcam/rng.hpp"
#include "realcam/tensor.hpp"

namespace realcam::model {

enum class CoordMode { absolute, relative, none };

inline std::string coord_mode_name(CoordMode m) {
  switch (m) {
    case CoordMode::absolute: return "absolute";
    case CoordMode::relative: return "relative";
    case CoordMode::none: return "none";
  }
  return "?";
}

inline CoordMode parse_coord_mode(std::string_view v) {
  if (v == "absolute") return CoordMode::absolute;
  if (v == "relative") return CoordMode::relative;
  if (v == "none") return CoordMode::none;
  throw ConfigError("coord_mode: expected absolute|relative|none, got '" + std::string(v) + "'");
}

struct ModelConfig {
  int channels = 32;
  int latent_channels = 48;
  int cimc_blocks = 2;
  int window = 8;
  int heads = 2;
  int down_stages = 2;
  int global_size = 64;
  bool use_cadr = true;
  CoordMode coord_mode = CoordMode::absolute;
  bool use_csa = true;
  bool use_gft = true;
  bool use_lft = true;

  bool coords_active() const { return use_cadr && coord_mode != CoordMode::none; }
  int blocks_per_stage() const { return cimc_blocks / down_stages; }
  // Spatial reduction from RAW pixels to latent positions.
  int latent_stride() const { return 2 << down_stages; }

  void validate() const {
    auto bad = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (channels < 4 || channels % 4) bad("channels must be a positive multiple of 4");
    if (latent_channels < 1) bad("latent_channels must be >= 1");
    if (down_stages < 1 || down_stages > 4) bad("down_stages must be in [1, 4]");
    if (cimc_blocks < down_stages || cimc_blocks % down_stages) {
      bad("cimc_blocks must be a positive multiple of down_stages");
    }
    if (window < 1) bad("window must be >= 1");
    if (heads < 1 || (channels / 2) % heads) bad("heads must divide channels/2");
    if (global_size < 8 || global_size % 8) bad("global_size must be a multiple of 8");
  }

  // Checks that a RAW crop of h x w fits the downsampling and windowing.
  void validate_crop(int h, int w) const {
    const int s = latent_stride();
    if (h < s || w < s || h % s || w % s) {
      throw ShapeError("crop " + std::to_string(h) + "x" + std::to_string(w) +
                       " must be a positive multiple of " + std::to_string(s));
    }
    if (!use_csa) return;
    for (int k = 0; k <= down_stages; ++k) {
      const int fh = (h / 2) >> k, fw = (w / 2) >> k;
      if (fh % window || fw % window) {
        throw ShapeError("window " + std::to_string(window) + " does not divide feature map " +
                         std::to_string(fh) + "x" + std::to_string(fw) + " of crop " +
                         std::to_string(h) + "x" + std::to_string(w));
      }
    }
  }

  std::string to_text() const {
    std::string s;
    auto kv = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    kv("channels", std::to_string(channels));
    kv("latent_channels", std::to_string(latent_channels));
    kv("cimc_blocks", std::to_string(cimc_blocks));
    kv("window", std::to_string(window));
    kv("heads", std::to_string(heads));
    kv("down_stages", std::to_string(down_stages));
    kv("global_size", std::to_string(global_size));
    kv("use_cadr", b(use_cadr));
    kv("coord_mode", coord_mode_name(coord_mode));
    kv("use_csa", b(use_csa));
    kv("use_gft", b(use_gft));
    kv("use_lft", b(use_lft));
    return s;
  }

  // Applies one key; returns false for keys this config does not own.
  bool set(const std::string& k, const std::string& v) {
    auto i = [&](int& dst) { dst = static_cast<int>(parse_int(k, v)); };
    if (k == "channels") i(channels);
    else if (k == "latent_channels") i(latent_channels);
    else if (k == "cimc_blocks") i(cimc_blocks);
    else if (k == "window") i(window);
    else if (k == "heads") i(heads);
    else if (k == "down_stages") i(down_stages);
    else if (k == "global_size") i(global_size);
    else if (k == "use_cadr") use_cadr = parse_bool(k, v);
    else if (k == "coord_mode") coord_mode = parse_coord_mode(v);
    else if (k == "use_csa") use_csa = parse_bool(k, v);
    else if (k == "use_gft") use_gft = parse_bool(k, v);
    else if (k == "use_lft") use_lft = parse_bool(k, v);
    else return false;
    return true;
  }

  static ModelConfig parse(std::string_view text, std::string_view origin = "model config") {
    ModelConfig c;
    for (const auto& [k, v] : parse_key_values(text, origin)) {
      if (!c.set(k, v)) throw ConfigError(std::string(origin) + ": unknown key '" + k + "'");
    }
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Parameters

enum class ParamGroup { encoder, decoder, entropy };

inline ParamGroup param_group(std::string_view name) {
  if (name.starts_with("enc.") || name.starts_with("cpe.")) return ParamGroup::encoder;
  if (name.starts_with("dec.")) return ParamGroup::decoder;
  if (name.starts_with("ent.")) return ParamGroup::entropy;
  throw ConfigError("parameter '" + std::string(name) + "' has no group prefix");
}

enum class Init { he, lecun, small, zeros, ones, gate_bias, prior_bias };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

namespace detail {

inline void conv_spec(std::vector<ParamSpec>& out, const std::string& p, int co, int ci, int k,
                      Init w = Init::he, Init b = Init::zeros) {
  out.push_back({p + ".w", {co, ci, k, k}, w});
  out.push_back({p + ".b", {co}, b});
}

inline void csa_specs(std::vector<ParamSpec>& out, const std::string& p, int c) {
  const int h = c / 2, r = std::max(1, h / 4);
  conv_spec(out, p + ".in", c, c, 1, Init::lecun);
  conv_spec(out, p + ".cw.fc1", r, h, 1);
  conv_spec(out, p + ".cw.fc2", h, r, 1, Init::lecun);
  out.push_back({p + ".sa.ln1.g", {h}, Init::ones});
  out.push_back({p + ".sa.ln1.b", {h}, Init::zeros});
  conv_spec(out, p + ".sa.qkv", 3 * h, h, 1, Init::lecun);
  conv_spec(out, p + ".sa.proj", h, h, 1, Init::small);
  out.push_back({p + ".sa.ln2.g", {h}, Init::ones});
  out.push_back({p + ".sa.ln2.b", {h}, Init::zeros});
  conv_spec(out, p + ".sa.mlp1", 2 * h, h, 1);
  conv_spec(out, p + ".sa.mlp2", h, 2 * h, 1, Init::small);
  conv_spec(out, p + ".out", c, c, 1, Init::lecun);
}

}  // namespace detail

inline std::string cimc_prefix(int block) { return "enc.cimc" + std::to_string(block); }

inline std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  std::vector<ParamSpec> s;
  detail::conv_spec(s, "enc.cadr.conv", c, 4, 3, Init::lecun);
  if (cfg.coords_active()) detail::conv_spec(s, "enc.cadr.coord", c, 2, 3, Init::small, Init::gate_bias);
  for (int k = 0; k < cfg.down_stages; ++k) detail::conv_spec(s, "enc.down" + std::to_string(k), c, c, 3);
  if (cfg.use_csa) {
    for (int j = 0; j < cfg.cimc_blocks; ++j) {
      detail::csa_specs(s, cimc_prefix(j) + ".csa0", c);
      detail::csa_specs(s, cimc_prefix(j) + ".csa1", c);
    }
  }
  detail::conv_spec(s, "enc.out", cfg.latent_channels, c, 1, Init::lecun);
  if (cfg.use_gft) {
    detail::conv_spec(s, "cpe.g.conv0", c, 4, 3);
    detail::conv_spec(s, "cpe.g.conv1", c, c, 3);
    detail::conv_spec(s, "cpe.g.conv2", c, c, 3);
    for (int j = 0; j < cfg.cimc_blocks; ++j) {
      detail::conv_spec(s, "cpe.g.head" + std::to_string(j), 2 * c, c, 1, Init::small, Init::prior_bias);
    }
  }
  if (cfg.use_lft) {
    detail::conv_spec(s, "cpe.l.conv0", c, 4, 3);
    for (int k = 0; k < cfg.down_stages; ++k) detail::conv_spec(s, "cpe.l.down" + std::to_string(k), c, c, 3);
    for (int j = 0; j < cfg.cimc_blocks; ++j) {
      detail::conv_spec(s, "cpe.l.head" + std::to_string(j), 2 * c, c, 1, Init::small, Init::prior_bias);
    }
  }
  for (int k = 0; k < cfg.down_stages; ++k) {
    detail::conv_spec(s, "dec.up" + std::to_string(k), 4 * c, k == 0 ? cfg.latent_channels : c, 3);
    if (cfg.use_csa) detail::csa_specs(s, "dec.csa" + std::to_string(k), c);
  }
  detail::conv_spec(s, "dec.out", 3, c / 4, 3, Init::lecun);
  s.push_back({"ent.mu", {cfg.latent_channels}, Init::zeros});
  s.push_back({"ent.log_sigma", {cfg.latent_channels}, Init::zeros});
  return s;
}

// Deterministic initialisation: every tensor draws from its own stream
// keyed by (seed, name), so adding a parameter leaves the others unchanged.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore ps;
  for (const auto& sp : param_specs(cfg)) {
    Tensor<float> t(sp.shape);
    Rng rng(derive_seed(seed, fnv1a64(sp.name)));
    const double fan_in = sp.shape.size() == 4 ? double(sp.shape[1]) * sp.shape[2] * sp.shape[3] : 1.0;
    auto normal = [&](double std) {
      for (auto& v : t.vec()) v = static_cast<float>(std * rng.normal());
    };
    switch (sp.init) {
      case Init::he: normal(std::sqrt(2.0 / fan_in)); break;
      case Init::lecun: normal(std::sqrt(1.0 / fan_in)); break;
      case Init::small: normal(0.1 * std::sqrt(1.0 / fan_in)); break;
      case Init::zeros: break;
      case Init::ones: t.fill(1.0f); break;
      case Init::gate_bias: t.fill(1.0f); break;
      case Init::prior_bias:  // alpha half starts at 1, beta half at 0
        for (int i = 0; i < sp.shape[0] / 2; ++i) t[i] = 1.0f;
        break;
    }
    ps.add(sp.name, std::move(t));
  }
  return ps;
}

// Throws unless `ps` holds exactly the parameters of `cfg` with matching shapes.
inline void check_params(const ModelConfig& cfg, const ParamStore& ps) {
  const auto specs = param_specs(cfg);
  if (specs.size() != ps.size()) {
    throw ModelMismatchError("parameter count " + std::to_string(ps.size()) +
                             " does not match config (" + std::to_string(specs.size()) + ")");
  }
  for (const auto& sp : specs) {
    if (!ps.contains(sp.name)) throw ModelMismatchError("missing parameter '" + sp.name + "'");
    if (ps.at(sp.name).shape() != sp.shape) {
      throw ModelMismatchError("parameter '" + sp.name + "' has shape " +
                               shape_str(ps.at(sp.name).shape()) + ", config wants " +
                               shape_str(sp.shape));
    }
  }
}

inline std::uint64_t model_id(const ModelConfig& cfg, const ParamStore& ps) {
  std::uint64_t h = fnv1a64(cfg.to_text());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    h = fnv1a64(ps.name(i), h);
    const auto& t = ps.tensor(i);
    h = fnv1a64(reinterpret_cast<const unsigned char*>(t.data()), t.size() * sizeof(float), h);
  }
  return h;
}

// Parameters placed on a tape as leaves.
template <class T>
class Bound {
 public:
  Bound(ad::Tape<T>& tape, const ParamStore& ps, bool requires_grad) : tape_(&tape) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      vars_.emplace(ps.name(i), tape.leaf(ps.tensor(i).template cast<T>(), requires_grad));
      order_.push_back(ps.name(i));
    }
  }

  ad::Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("model: parameter '" + name + "' not bound");
    return it->second;
  }

  ad::Tape<T>& tape() const { return *tape_; }
  const std::vector<std::string>& names() const { return order_; }

 private:
  ad::Tape<T>* tape_;
  std::map<std::string, ad::Var<T>> vars_;
  std::vector<std::string> order_;
};

// Optional probes into a forward pass.
template <class T>
struct Trace {
  std::vector<Tensor<T>> attention;  // softmax output of every SWA call
  ad::Var<T> global_features;        // F_g map right before pooling
  std::vector<ad::Var<T>> g_alpha, g_beta, l_alpha, l_beta;
  ad::Var<T> cadr_out;
};

// ---------------------------------------------------------------------------
// Building blocks

template <class T>
ad::Var<T> conv(const Bound<T>& P, const std::string& p, ad::Var<T> x, int stride = 1) {
  return ad::conv2d(x, P[p + ".w"], P[p + ".b"], stride);
}

// Windowed multi-head self-attention block with pre-norm and an MLP.
template <class T>
ad::Var<T> swa(const ModelConfig& cfg, const Bound<T>& P, const std::string& p, ad::Var<T> x,
               Trace<T>* tr) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ws = cfg.window, heads = cfg.heads;
  auto t = ad::layernorm(x, P[p + ".ln1.g"], P[p + ".ln1.b"]);
  auto qkv = ad::split(conv(P, p + ".qkv", t), {c, c, c});
  auto q = ad::window_partition(qkv[0], ws, heads);
  auto k = ad::window_partition(qkv[1], ws, heads);
  auto v = ad::window_partition(qkv[2], ws, heads);
  const double d = static_cast<double>(c / heads);
  auto a = ad::softmax(ad::scale(ad::matmul(q, k, true), 1.0 / std::sqrt(d)));
  if (tr) tr->attention.push_back(a.value());
  auto o = ad::window_merge(ad::matmul(a, v), n, c, h, w, ws, heads);
  auto x1 = ad::add(x, conv(P, p + ".proj", o));
  auto m = ad::layernorm(x1, P[p + ".ln2.g"], P[p + ".ln2.b"]);
  m = conv(P, p + ".mlp2", ad::relu(conv(P, p + ".mlp1", m)));
  return ad::add(x1, m);
}

// Squeeze-excitation style channel gate with a residual.
template <class T>
ad::Var<T> cwra(const Bound<T>& P, const std::string& p, ad::Var<T> x) {
  const int n = x.dim(0), c = x.dim(1);
  auto s = ad::reshape(ad::global_avg_pool(x), {n, c, 1, 1});
  s = ad::relu(conv(P, p + ".fc1", s));
  s = ad::sigmoid(conv(P, p + ".fc2", s));
  return ad::add(x, ad::channel_affine(x, ad::reshape(s, {n, c})));
}

template <class T>
ad::Var<T> csa(const ModelConfig& cfg, const Bound<T>& P, const std::string& p, ad::Var<T> x,
               Trace<T>* tr = nullptr) {
  const int c = x.dim(1);
  if (c % 2) throw ShapeError("csa: channel count " + std::to_string(c) + " is odd");
  auto parts = ad::split(conv(P, p + ".in", x), {c / 2, c / 2});
  auto x_ca = cwra(P, p + ".cw", parts[0]);
  auto x_sa = swa(cfg, P, p + ".sa", parts[1], tr);
  return conv(P, p + ".out", ad::concat(std::vector<ad::Var<T>>{x_sa, x_ca}));
}

template <class T>
ad::Var<T> lft(ad::Var<T> x, ad::Var<T> alpha, ad::Var<T> beta) {
  return ad::add(ad::mul(alpha, x), beta);
}

template <class T>
ad::Var<T> gft(ad::Var<T> x, ad::Var<T> alpha, ad::Var<T> beta) {
  return ad::channel_affine(x, alpha, beta);
}

// x_o = conv(x) * relu(conv(coords)); plain conv when coordinates are off.
template <class T>
ad::Var<T> cadr(const ModelConfig& cfg, const Bound<T>& P, ad::Var<T> x, ad::Var<T> coords) {
  auto xh = conv(P, "enc.cadr.conv", x);
  if (!cfg.coords_active()) return xh;
  if (coords.shape() != Shape{x.dim(0), 2, x.dim(2), x.dim(3)}) {
    throw ShapeError("cadr: coordinate map " + shape_str(coords.shape()) + " does not match crop " +
                     shape_str(x.shape()));
  }
  return ad::mul(xh, ad::relu(conv(P, "enc.cadr.coord", coords)));
}

template <class T>
struct Priors {
  std::vector<ad::Var<T>> g_alpha, g_beta;  // [N,C] per CIMC block
  std::vector<ad::Var<T>> l_alpha, l_beta;  // [N,C,h,w] per CIMC block
};

template <class T>
Priors<T> cpe(const ModelConfig& cfg, const Bound<T>& P, ad::Var<T> global, ad::Var<T> x,
              Trace<T>* tr = nullptr) {
  Priors<T> pr;
  const int n = x.dim(0), c = cfg.channels;
  if (cfg.use_gft) {
    const Shape want{n, 4, cfg.global_size, cfg.global_size};
    if (global.shape() != want) {
      throw ShapeError("cpe: global input " + shape_str(global.shape()) + ", expected " + shape_str(want));
    }
    auto g = ad::relu(conv(P, "cpe.g.conv0", global, 2));
    g = ad::relu(conv(P, "cpe.g.conv1", g, 2));
    g = ad::relu(conv(P, "cpe.g.conv2", g, 2));
    if (tr) tr->global_features = g;
    auto pooled = ad::reshape(ad::global_avg_pool(g), {n, c, 1, 1});
    for (int j = 0; j < cfg.cimc_blocks; ++j) {
      auto ab = ad::split(ad::reshape(conv(P, "cpe.g.head" + std::to_string(j), pooled), {n, 2 * c}), {c, c});
      pr.g_alpha.push_back(ab[0]);
      pr.g_beta.push_back(ab[1]);
    }
  }
  if (cfg.use_lft) {
    auto f = ad::relu(conv(P, "cpe.l.conv0", x));
    int j = 0;
    for (int k = 0; k < cfg.down_stages; ++k) {
      f = ad::relu(conv(P, "cpe.l.down" + std::to_string(k), f, 2));
      for (int b = 0; b < cfg.blocks_per_stage(); ++b, ++j) {
        auto ab = ad::split(conv(P, "cpe.l.head" + std::to_string(j), f), {c, c});
        pr.l_alpha.push_back(ab[0]);
        pr.l_beta.push_back(ab[1]);
      }
    }
  }
  if (tr) {
    tr->g_alpha = pr.g_alpha;
    tr->g_beta = pr.g_beta;
    tr->l_alpha = pr.l_alpha;
    tr->l_beta = pr.l_beta;
  }
  return pr;
}

// x_c = LFT(CSA(LFT(CSA(x)))), x_o = GFT(x_c); disabled stages are identity.
template <class T>
ad::Var<T> cimc(const ModelConfig& cfg, const Bound<T>& P, int block, ad::Var<T> x,
                const Priors<T>& pr, Trace<T>* tr = nullptr) {
  auto t = x;
  for (int r = 0; r < 2; ++r) {
    if (cfg.use_csa) t = csa(cfg, P, cimc_prefix(block) + ".csa" + std::to_string(r), t, tr);
    if (cfg.use_lft) t = lft(t, pr.l_alpha.at(block), pr.l_beta.at(block));
  }
  if (cfg.use_gft) t = gft(t, pr.g_alpha.at(block), pr.g_beta.at(block));
  return t;
}

// Model inputs for a batch of crops, all [N,...] float tensors.
struct Inputs {
  Tensor<float> x;       // [N,4,h/2,w/2] stacked RGGB crop
  Tensor<float> coords;  // [N,2,h/2,w/2] coordinate map matching coord_mode
  Tensor<float> global;  // [N,4,G,G] area-downsampled full capture
};

// y = E(x). Unused inputs (coords or global when their branch is off) may
// be invalid handles.
template <class T>
ad::Var<T> encode(const ModelConfig& cfg, const Bound<T>& P, ad::Var<T> x, ad::Var<T> coords,
                  ad::Var<T> global, Trace<T>* tr = nullptr) {
  if (x.shape().size() != 4 || x.dim(1) != 4) {
    throw ShapeError("encode: crop must be [N,4,h,w], got " + shape_str(x.shape()));
  }
  cfg.validate_crop(2 * x.dim(2), 2 * x.dim(3));
  auto t = cadr(cfg, P, x, coords);
  if (tr) tr->cadr_out = t;
  const Priors<T> pr = cpe(cfg, P, global, x, tr);
  int j = 0;
  for (int k = 0; k < cfg.down_stages; ++k) {
    t = ad::relu(conv(P, "enc.down" + std::to_string(k), t, 2));
    for (int b = 0; b < cfg.blocks_per_stage(); ++b) t = cimc(cfg, P, j++, t, pr, tr);
  }
  return conv(P, "enc.out", t);
}

// o = D(y_hat): [N,C_y,h',w'] -> [N,3,h,w], unclipped.
template <class T>
ad::Var<T> decode(const ModelConfig& cfg, const Bound<T>& P, ad::Var<T> y, Trace<T>* tr = nullptr) {
  if (y.shape().size() != 4 || y.dim(1) != cfg.latent_channels) {
    throw ShapeError("decode: latent must be [N," + std::to_string(cfg.latent_channels) +
                     ",h,w], got " + shape_str(y.shape()));
  }
  auto t = y;
  for (int k = 0; k < cfg.down_stages; ++k) {
    t = ad::relu(ad::depth_to_space(conv(P, "dec.up" + std::to_string(k), t), 2));
    if (cfg.use_csa) t = csa(cfg, P, "dec.csa" + std::to_string(k), t, tr);
  }
  return conv(P, "dec.out", ad::depth_to_space(t, 2));
}

// Places `in` on the tape as constants; branches the config does not use
// get invalid handles.
template <class T>
struct InputVars {
  ad::Var<T> x, coords, global;
};

template <class T>
InputVars<T> bind_inputs(ad::Tape<T>& tape, const ModelConfig& cfg, const Inputs& in,
                         bool requires_grad = false) {
  InputVars<T> v;
  v.x = tape.leaf(in.x.template cast<T>(), requires_grad);
  if (cfg.coords_active()) v.coords = tape.leaf(in.coords.template cast<T>(), requires_grad);
  if (cfg.use_gft) v.global = tape.leaf(in.global.template cast<T>(), requires_grad);
  return v;
}

}  // namespace realcam::model
