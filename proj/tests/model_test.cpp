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

#include <gtest/gtest.h>

#include "realcam/model.hpp"

namespace realcam::model {
namespace {

using ad::Tape;
using ad::Var;

Tensor<float> random_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor<float> t(std::move(s));
  Rng rng(seed);
  for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Inputs random_inputs(const ModelConfig& cfg, int n, int h, int w, std::uint64_t seed) {
  return Inputs{random_tensor({n, 4, h / 2, w / 2}, seed),
                random_tensor({n, 2, h / 2, w / 2}, seed + 1),
                random_tensor({n, 4, cfg.global_size, cfg.global_size}, seed + 2)};
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 4;
  c.latent_channels = 3;
  c.cimc_blocks = 1;
  c.down_stages = 1;
  c.window = 4;
  c.heads = 1;
  c.global_size = 8;
  return c;
}

TEST(ModelShapes, EncodeDecodeDesk) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 1);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 2, 64, 64, 5));
  auto y = encode(cfg, P, in.x, in.coords, in.global);
  EXPECT_EQ(y.shape(), (Shape{2, 48, 8, 8}));
  auto o = decode(cfg, P, y);
  EXPECT_EQ(o.shape(), (Shape{2, 3, 64, 64}));
}

TEST(ModelShapes, EvenCropsRoundTripDims) {
  ModelConfig cfg;
  cfg.use_csa = false;
  const ParamStore ps = init_params(cfg, 1);
  for (auto [h, w] : {std::pair{32, 32}, std::pair{32, 96}, std::pair{128, 64}}) {
    Tape<float> tape;
    Bound<float> P(tape, ps, false);
    const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 1, h, w, 9));
    auto o = decode(cfg, P, encode(cfg, P, in.x, in.coords, in.global));
    EXPECT_EQ(o.shape(), (Shape{1, 3, h, w}));
  }
}

TEST(ModelShapes, WindowMustDivideFeatures) {
  ModelConfig cfg;
  EXPECT_THROW(cfg.validate_crop(48, 48), ShapeError);  // 24x24 stage map vs window 8
  EXPECT_THROW(cfg.validate_crop(36, 64), ShapeError);
  EXPECT_NO_THROW(cfg.validate_crop(64, 128));
}

TEST(Cadr, ZeroGateGivesZero) {
  ModelConfig cfg;
  ParamStore ps = init_params(cfg, 2);
  ps.at("enc.cadr.coord.w").fill(0.0f);
  ps.at("enc.cadr.coord.b").fill(0.0f);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 1, 32, 32, 3));
  auto out = cadr(cfg, P, in.x, in.coords);
  for (float v : out.value().vec()) EXPECT_EQ(v, 0.0f);
}

TEST(Cadr, UnitGateIsPassThrough) {
  ModelConfig cfg;
  ParamStore ps = init_params(cfg, 2);
  ps.at("enc.cadr.coord.w").fill(0.0f);
  ps.at("enc.cadr.coord.b").fill(1.0f);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 1, 32, 32, 3));
  auto out = cadr(cfg, P, in.x, in.coords);
  auto xh = conv(P, "enc.cadr.conv", in.x);
  EXPECT_EQ(out.value(), xh.value());
}

TEST(Cadr, SensitiveToCoordinates) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 4);
  Inputs a = random_inputs(cfg, 1, 32, 32, 7);
  Inputs b = a;
  b.coords = random_tensor({1, 2, 16, 16}, 99);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto ia = bind_inputs(tape, cfg, a);
  const auto ib = bind_inputs(tape, cfg, b);
  auto oa = cadr(cfg, P, ia.x, ia.coords);
  auto ob = cadr(cfg, P, ib.x, ib.coords);
  auto ga = ad::relu(conv(P, "enc.cadr.coord", ia.coords));
  auto gb = ad::relu(conv(P, "enc.cadr.coord", ib.coords));
  auto xh = conv(P, "enc.cadr.conv", ia.x);
  int differing = 0;
  for (std::size_t i = 0; i < oa.value().size(); ++i) {
    const bool gate_differs = ga.value()[i] != gb.value()[i];
    if (gate_differs && xh.value()[i] != 0.0f) {
      EXPECT_NE(oa.value()[i], ob.value()[i]);
      ++differing;
    }
    if (!gate_differs) {
      EXPECT_EQ(oa.value()[i], ob.value()[i]);
    }
  }
  EXPECT_GT(differing, 0);
}

TEST(Cadr, RejectsMismatchedCoordinates) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 4);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  auto x = tape.constant(random_tensor({1, 4, 16, 16}, 1));
  auto c = tape.constant(random_tensor({1, 2, 8, 16}, 1));
  EXPECT_THROW(cadr(cfg, P, x, c), ShapeError);
}

TEST(Cpe, GlobalPriorIsCropInvariant) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 5);
  Inputs a = random_inputs(cfg, 1, 64, 64, 10);
  Inputs b = random_inputs(cfg, 1, 64, 64, 20);
  b.global = a.global;
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto ia = bind_inputs(tape, cfg, a);
  const auto ib = bind_inputs(tape, cfg, b);
  const auto pa = cpe(cfg, P, ia.global, ia.x);
  const auto pb = cpe(cfg, P, ib.global, ib.x);
  for (int j = 0; j < cfg.cimc_blocks; ++j) {
    EXPECT_EQ(pa.g_alpha[j].value(), pb.g_alpha[j].value());
    EXPECT_EQ(pa.g_beta[j].value(), pb.g_beta[j].value());
    EXPECT_NE(pa.l_alpha[j].value(), pb.l_alpha[j].value());
  }
  EXPECT_EQ(pa.l_alpha[0].shape(), (Shape{1, 32, 16, 16}));
  EXPECT_EQ(pa.l_alpha[1].shape(), (Shape{1, 32, 8, 8}));
}

TEST(Cpe, BrightnessChangesGlobalPrior) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 5);
  Inputs a = random_inputs(cfg, 1, 64, 64, 10);
  Inputs b = a;
  for (auto& v : b.global.vec()) v *= 2.0f;
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto ia = bind_inputs(tape, cfg, a);
  const auto ib = bind_inputs(tape, cfg, b);
  EXPECT_NE(cpe(cfg, P, ia.global, ia.x).g_alpha[0].value(), cpe(cfg, P, ib.global, ib.x).g_alpha[0].value());
}

TEST(Cpe, ZeroHeadsGiveBias) {
  ModelConfig cfg;
  ParamStore ps = init_params(cfg, 5);
  for (int j = 0; j < cfg.cimc_blocks; ++j) {
    const std::string g = "cpe.g.head" + std::to_string(j), l = "cpe.l.head" + std::to_string(j);
    ps.at(g + ".w").fill(0.0f);
    ps.at(l + ".w").fill(0.0f);
    for (int c = 0; c < 64; ++c) ps.at(g + ".b")[c] = ps.at(l + ".b")[c] = 0.25f + 0.01f * c;
  }
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 2, 64, 64, 10));
  const auto pr = cpe(cfg, P, in.global, in.x);
  for (int j = 0; j < cfg.cimc_blocks; ++j) {
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < 32; ++c) {
        EXPECT_EQ(pr.g_alpha[j].value()[s * 32 + c], 0.25f + 0.01f * c);
        EXPECT_EQ(pr.g_beta[j].value()[s * 32 + c], 0.25f + 0.01f * (c + 32));
      }
    const auto& la = pr.l_alpha[j].value();
    const int hw = la.dim(2) * la.dim(3);
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i], 0.25f + 0.01f * ((i / hw) % 32));
  }
}

TEST(Csa, ShapeAndAttentionRows) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 6);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  auto x = tape.constant(random_tensor({2, 32, 16, 16}, 3, -1.0, 1.0));
  Trace<float> tr;
  auto y = csa(cfg, P, "enc.cimc0.csa0", x, &tr);
  EXPECT_EQ(y.shape(), (Shape{2, 32, 16, 16}));
  ASSERT_EQ(tr.attention.size(), 1u);
  const auto& a = tr.attention[0];
  EXPECT_EQ(a.shape(), (Shape{2 * 4 * 2, 64, 64}));
  for (std::size_t r = 0; r < a.size() / 64; ++r) {
    double s = 0;
    for (int k = 0; k < 64; ++k) s += a[r * 64 + k];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Csa, ZeroWeightsResidualWiring) {
  ModelConfig cfg;
  ParamStore ps = init_params(cfg, 6);
  const std::string p = "enc.cimc0.csa0";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i).starts_with(p) && ps.name(i).find(".ln") == std::string::npos) ps.tensor(i).fill(0.0f);
  }
  for (const char* k : {".in.w", ".out.w"}) {
    auto& w = ps.at(p + k);
    for (int c = 0; c < 32; ++c) w[c * 32 + c] = 1.0f;
  }
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  auto xt = random_tensor({1, 32, 8, 8}, 3, -1.0, 1.0);
  auto y = csa(cfg, P, p, tape.constant(xt));
  // Spatial half passes through, channel half is scaled by 1 + sigmoid(0).
  for (int c = 0; c < 32; ++c)
    for (int i = 0; i < 64; ++i) {
      const float expect = c < 16 ? xt[(c + 16) * 64 + i] : 1.5f * xt[(c - 16) * 64 + i];
      EXPECT_FLOAT_EQ(y.value()[c * 64 + i], expect);
    }
}

TEST(Csa, OddChannelsRejected) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 6);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  EXPECT_THROW(csa(cfg, P, "enc.cimc0.csa0", tape.constant(Tensor<float>({1, 5, 8, 8}))), ShapeError);
}

TEST(AffineTransforms, Examples) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 2, 2, 2}, 1.0f));
  auto g = gft(x, tape.constant(Tensor<float>({1, 2}, 2.0f)), tape.constant(Tensor<float>({1, 2}, 0.5f)));
  for (float v : g.value().vec()) EXPECT_EQ(v, 2.5f);
  auto one = tape.constant(Tensor<float>({1, 2, 2, 2}, 1.0f));
  auto zero = tape.constant(Tensor<float>({1, 2, 2, 2}, 0.0f));
  auto xr = tape.constant(random_tensor({1, 2, 2, 2}, 1));
  EXPECT_EQ(lft(xr, one, zero).value(), xr.value());
  // Affine algebra: lft(x1 + x2) = lft(x1) + lft(x2) - beta.
  auto a = tape.constant(random_tensor({1, 2, 2, 2}, 2, 0.5, 2.0));
  auto b = tape.constant(random_tensor({1, 2, 2, 2}, 3));
  auto x2 = tape.constant(random_tensor({1, 2, 2, 2}, 4));
  auto lhs = lft(ad::add(xr, x2), a, b);
  auto rhs = ad::sub(ad::add(lft(xr, a, b), lft(x2, a, b)), b);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(lhs.value()[i], rhs.value()[i], 1e-6);
  EXPECT_THROW(lft(xr, tape.constant(Tensor<float>({1, 2, 1, 2})), b), ShapeError);
  EXPECT_THROW(gft(xr, tape.constant(Tensor<float>({1, 3})), tape.constant(Tensor<float>({1, 3}))), ShapeError);
}

TEST(Cimc, DisabledStagesAreIdentity) {
  ModelConfig cfg;
  cfg.use_csa = cfg.use_lft = cfg.use_gft = false;
  const ParamStore ps = init_params(cfg, 7);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  auto x = tape.constant(random_tensor({1, 32, 16, 16}, 3));
  EXPECT_EQ(cimc(cfg, P, 0, x, Priors<float>{}).value(), x.value());
}

TEST(Cimc, WithoutLftIsGftOfTwoCsa) {
  ModelConfig cfg;
  cfg.use_lft = false;
  const ParamStore ps = init_params(cfg, 7);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 1, 64, 64, 3));
  auto x = tape.constant(random_tensor({1, 32, 16, 16}, 3));
  const auto pr = cpe(cfg, P, in.global, in.x);
  auto got = cimc(cfg, P, 0, x, pr);
  auto want = gft(csa(cfg, P, "enc.cimc0.csa1", csa(cfg, P, "enc.cimc0.csa0", x)), pr.g_alpha[0], pr.g_beta[0]);
  EXPECT_EQ(got.value(), want.value());
  EXPECT_EQ(got.shape(), x.shape());
}

TEST(Cimc, FullCompositionOrder) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 8);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  const auto in = bind_inputs(tape, cfg, random_inputs(cfg, 1, 64, 64, 3));
  auto x = tape.constant(random_tensor({1, 32, 8, 8}, 3));
  const auto pr = cpe(cfg, P, in.global, in.x);
  auto got = cimc(cfg, P, 1, x, pr);
  const std::string p = "enc.cimc1";
  auto t = lft(csa(cfg, P, p + ".csa0", x), pr.l_alpha[1], pr.l_beta[1]);
  t = lft(csa(cfg, P, p + ".csa1", t), pr.l_alpha[1], pr.l_beta[1]);
  EXPECT_EQ(got.value(), gft(t, pr.g_alpha[1], pr.g_beta[1]).value());
}

TEST(Encode, NoCoordModeIgnoresCoordinates) {
  ModelConfig cfg;
  cfg.coord_mode = CoordMode::none;
  const ParamStore ps = init_params(cfg, 9);
  EXPECT_FALSE(ps.contains("enc.cadr.coord.w"));
  Inputs a = random_inputs(cfg, 1, 64, 64, 3);
  Inputs b = a;
  b.coords = random_tensor({1, 2, 32, 32}, 77);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  auto ia = bind_inputs(tape, cfg, a);
  auto ib = bind_inputs(tape, cfg, b);
  // Even if a caller supplies a coordinate map, it must not be read.
  ia.coords = tape.constant(a.coords);
  ib.coords = tape.constant(b.coords);
  EXPECT_EQ(encode(cfg, P, ia.x, ia.coords, ia.global).value(), encode(cfg, P, ib.x, ib.coords, ib.global).value());
}

TEST(Encode, DeterministicAndComposes) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 10);
  const Inputs in = random_inputs(cfg, 2, 64, 64, 4);
  Tensor<float> y1, o_joint, o_split;
  {
    Tape<float> tape;
    Bound<float> P(tape, ps, false);
    auto iv = bind_inputs(tape, cfg, in);
    auto y = encode(cfg, P, iv.x, iv.coords, iv.global);
    y1 = y.value();
    o_joint = decode(cfg, P, y).value();
  }
  {
    Tape<float> tape;
    Bound<float> P(tape, ps, false);
    auto iv = bind_inputs(tape, cfg, in);
    EXPECT_EQ(encode(cfg, P, iv.x, iv.coords, iv.global).value(), y1);
  }
  {
    Tape<float> tape;
    Bound<float> P(tape, ps, false);
    o_split = decode(cfg, P, tape.constant(y1)).value();
  }
  EXPECT_EQ(o_joint, o_split);
}

TEST(Decode, FiniteAtInitOverSeeds) {
  ModelConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ParamStore ps = init_params(cfg, seed);
    Tape<float> tape;
    Bound<float> P(tape, ps, false);
    auto iv = bind_inputs(tape, cfg, random_inputs(cfg, 1, 64, 64, 1000 + seed));
    // Any non-finite intermediate throws from the tape.
    auto o = decode(cfg, P, encode(cfg, P, iv.x, iv.coords, iv.global));
    for (float v : o.value().vec()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Decode, RejectsWrongLatent) {
  ModelConfig cfg;
  const ParamStore ps = init_params(cfg, 1);
  Tape<float> tape;
  Bound<float> P(tape, ps, false);
  EXPECT_THROW(decode(cfg, P, tape.constant(Tensor<float>({1, 47, 8, 8}))), ShapeError);
}

// Probe-weighted output sum; the finite-difference oracle perturbs every
// parameter entry of a tiny model in double precision.
double tiny_probe(const ModelConfig& cfg, const ParamStore& ps, const Inputs& in,
                  const Tensor<double>& w, ParamStore* grads) {
  Tape<double> tape;
  Bound<double> P(tape, ps, grads != nullptr);
  auto iv = bind_inputs(tape, cfg, in);
  auto o = decode(cfg, P, encode(cfg, P, iv.x, iv.coords, iv.global));
  auto loss = ad::sum(ad::mul(o, tape.constant(w)));
  if (grads) {
    tape.backward(loss);
    for (const auto& name : P.names()) grads->add(name, tape.grad(P[name]).template cast<float>());
  }
  return loss.value()[0];
}

TEST(ModelGradient, TinyModelMatchesFiniteDifferences) {
  const ModelConfig cfg = tiny_config();
  const ParamStore base = init_params(cfg, 3);
  const Inputs in = random_inputs(cfg, 1, 16, 16, 5);
  Tensor<double> w({1, 3, 16, 16});
  Rng rng(8);
  for (auto& v : w.vec()) v = rng.uniform(-1, 1);
  // Weights are stored as float; the double forward of float-valued weights
  // is exact, and the step actually taken is measured after rounding.
  ParamStore grads;
  tiny_probe(cfg, base, in, w, &grads);
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& t = base.tensor(i);
    std::vector<double> num(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) {
      ParamStore p = base;
      p.tensor(i)[k] = static_cast<float>(t[k] + h);
      const double up = tiny_probe(cfg, p, in, w, nullptr);
      const double hp = static_cast<double>(p.tensor(i)[k]) - t[k];
      p.tensor(i)[k] = static_cast<float>(t[k] - h);
      const double dn = tiny_probe(cfg, p, in, w, nullptr);
      const double hm = t[k] - static_cast<double>(p.tensor(i)[k]);
      num[k] = (up - dn) / (hp + hm);
    }
    double dn2 = 0, an2 = 0, nn2 = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double a = grads.tensor(i)[k];
      dn2 += (a - num[k]) * (a - num[k]);
      an2 += a * a;
      nn2 += num[k] * num[k];
    }
    const double rel = std::sqrt(dn2) / std::max({std::sqrt(an2), std::sqrt(nn2), 1e-12});
    EXPECT_LT(rel, 1e-3) << base.name(i);
    worst = std::max(worst, rel);
  }
  RecordProperty("worst_rel_err", std::to_string(worst));
}

TEST(ModelConfigText, RoundTripAndErrors) {
  ModelConfig c;
  c.channels = 16;
  c.coord_mode = CoordMode::relative;
  c.use_gft = false;
  EXPECT_EQ(ModelConfig::parse(c.to_text()), c);
  EXPECT_THROW(ModelConfig::parse("channels = 32\nwidth = 3\n"), ConfigError);
  EXPECT_THROW(ModelConfig::parse("channels = 30\n"), ConfigError);
  EXPECT_THROW(ModelConfig::parse("coord_mode = polar\n"), ConfigError);
  EXPECT_THROW(ModelConfig::parse("heads = 3\n"), ConfigError);
  EXPECT_THROW(ModelConfig::parse("use_csa = maybe\n"), ConfigError);
}

TEST(Params, GroupsAndAblationPruning) {
  ModelConfig full;
  const ParamStore ps = init_params(full, 1);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_NO_THROW(param_group(ps.name(i)));
  EXPECT_TRUE(ps.contains("cpe.g.head1.w"));
  ModelConfig base = full;
  base.use_cadr = base.use_csa = base.use_gft = base.use_lft = false;
  const ParamStore pb = init_params(base, 1);
  for (std::size_t i = 0; i < pb.size(); ++i) {
    EXPECT_FALSE(pb.name(i).starts_with("cpe.")) << pb.name(i);
    EXPECT_EQ(pb.name(i).find("csa"), std::string::npos) << pb.name(i);
    EXPECT_NE(pb.name(i), "enc.cadr.coord.w");
  }
  // Shared tensors are initialised identically across variants.
  EXPECT_EQ(pb.at("enc.down0.w"), ps.at("enc.down0.w"));
  EXPECT_THROW(check_params(full, pb), ModelMismatchError);
  EXPECT_NO_THROW(check_params(base, pb));
}

TEST(Checkpoint, RoundTripAndErrors) {
  ModelConfig cfg = tiny_config();
  Checkpoint ck{cfg.to_text(), init_params(cfg, 4)};
  const auto bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.config_text, ck.config_text);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(model_id(cfg, back.params), model_id(cfg, ck.params));
  ParamStore changed = ck.params;
  changed.tensor(0)[0] += 1e-3f;
  EXPECT_NE(model_id(cfg, changed), model_id(cfg, ck.params));
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  EXPECT_THROW(deserialize_checkpoint({bytes.begin(), bytes.end() - 3}), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(extra), FormatError);
}

}  // namespace
}  // namespace realcam::model
