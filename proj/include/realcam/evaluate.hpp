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

// Rate-distortion evaluation over a dataset split through the real
// bitstream path, RD/BD CSV tables.

#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "realcam/bd.hpp"
#include "realcam/codec.hpp"
#include "realcam/dataset.hpp"
#include "realcam/metrics.hpp"

namespace realcam::eval {

struct RdPoint {
  std::string variant;
  int lambda_index = 0;
  double bpp = 0;
  double psnr = 0;
  double msssim_raw = 0;
  double msssim_db = 0;
  double delta_e = 0;
  int identical = 0;         // captures with PSNR capped
  int msssim_scales = 0;
  std::size_t clamped = 0;   // latent symbols clipped into the coder support
  std::uint64_t bits = 0;
  std::uint64_t pixels = 0;

  friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

struct CaptureResult {
  std::uint32_t id = 0;
  std::vector<entropy::Bitstream> streams;
  sim::RgbImage recon;
};

// Encode -> serialize -> parse -> decode for one capture.
inline CaptureResult roundtrip(const codec::Model& m, const sim::CaptureRecord& rec, codec::GlobalCache& g,
                               int crop, std::size_t* clamped = nullptr) {
  const codec::Encoded e = codec::encode_capture(m, rec, g.get(rec), crop, crop);
  if (clamped) *clamped += e.clamped;
  CaptureResult r;
  r.id = rec.id;
  r.streams = codec::unpack_streams(codec::pack_streams(e.tiles));
  r.recon = codec::decode_capture(m, r.streams);
  return r;
}

// Metrics are per-capture means; bpp is total stream bits over total pixels.
inline RdPoint evaluate(const codec::Model& m, const sim::Dataset& ds, const std::vector<std::uint32_t>& ids,
                        int crop, const std::string& variant) {
  if (ids.empty()) throw ConfigError("evaluate: empty split");
  codec::GlobalCache g(m.cfg.global_size);
  RdPoint p;
  p.variant = variant;
  p.lambda_index = m.lambda_index;
  p.msssim_scales = 5;
  for (std::uint32_t id : ids) {
    const auto& rec = ds.at(id);
    const CaptureResult r = roundtrip(m, rec, g, crop, &p.clamped);
    for (const auto& s : r.streams) p.bits += s.total_bits();
    p.pixels += static_cast<std::uint64_t>(rec.raw.height) * rec.raw.width;
    const auto ps = metrics::psnr(r.recon, rec.target);
    const auto ms = metrics::ms_ssim(r.recon, rec.target);
    p.psnr += ps.db;
    p.identical += ps.identical;
    p.msssim_raw += ms.raw;
    p.msssim_db += ms.db;
    p.msssim_scales = std::min(p.msssim_scales, ms.scales);
    p.delta_e += metrics::delta_e(r.recon, rec.target);
  }
  const double n = static_cast<double>(ids.size());
  p.bpp = static_cast<double>(p.bits) / static_cast<double>(p.pixels);
  p.psnr /= n;
  p.msssim_raw /= n;
  p.msssim_db /= n;
  p.delta_e /= n;
  return p;
}

// ---------------------------------------------------------------------------
// Tables

inline std::string num(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.6f", v);
  return b;
}

inline std::string rd_csv(const std::vector<RdPoint>& pts) {
  std::string s = "variant,lambda_index,bpp,psnr_db,msssim_raw,msssim_db,delta_e\n";
  for (const auto& p : pts) {
    s += p.variant + "," + std::to_string(p.lambda_index) + "," + num(p.bpp) + "," + num(p.psnr) + "," +
         num(p.msssim_raw) + "," + num(p.msssim_db) + "," + num(p.delta_e) + "\n";
  }
  return s;
}

inline std::vector<RdPoint> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "variant,lambda_index,bpp,psnr_db,msssim_raw,msssim_db,delta_e") {
    throw FormatError("rd csv: unexpected header");
  }
  std::vector<RdPoint> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 7) throw FormatError("rd csv: row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
    RdPoint p;
    p.variant = f[0];
    p.lambda_index = static_cast<int>(parse_int("lambda_index", f[1]));
    p.bpp = parse_double("bpp", f[2]);
    p.psnr = parse_double("psnr_db", f[3]);
    p.msssim_raw = parse_double("msssim_raw", f[4]);
    p.msssim_db = parse_double("msssim_db", f[5]);
    p.delta_e = parse_double("delta_e", f[6]);
    out.push_back(p);
  }
  return out;
}

// Points of one variant ordered by lambda index.
inline std::vector<RdPoint> curve_points(const std::vector<RdPoint>& pts, const std::string& variant) {
  std::map<int, RdPoint> byl;
  for (const auto& p : pts) {
    if (p.variant == variant) byl[p.lambda_index] = p;
  }
  std::vector<RdPoint> out;
  for (auto& [_, p] : byl) out.push_back(p);
  return out;
}

enum class Axis { psnr, msssim_db, delta_e };

inline bd::Curve to_curve(const std::vector<RdPoint>& pts, Axis a) {
  bd::Curve c;
  for (const auto& p : pts) {
    c.rate.push_back(p.bpp);
    // Lower delta E is better; negate so every axis is higher-is-better.
    c.metric.push_back(a == Axis::psnr ? p.psnr : a == Axis::msssim_db ? p.msssim_db : -p.delta_e);
  }
  return c;
}

struct BdRow {
  std::string anchor, test, axis;
  double value = 0;  // NaN when the curves do not overlap
  bool non_monotone = false;
};

struct BdReport {
  bd::BdMethod method = bd::BdMethod::cubic;
  std::vector<BdRow> rows;

  double get(const std::string& test, const std::string& axis) const {
    for (const auto& r : rows) {
      if (r.test == test && r.axis == axis) return r.value;
    }
    throw ConfigError("bd report: no row for " + test + "/" + axis);
  }
};

// BD-Rate (%, PSNR axis), BD-PSNR, BD-MSSSIM (dB) and BD-deltaE of each
// test variant against the anchor.
inline std::vector<BdRow> bd_rows(const std::string& anchor, const std::vector<RdPoint>& a,
                                  const std::string& test, const std::vector<RdPoint>& t, bd::BdMethod m) {
  std::vector<BdRow> out;
  // Curves with no common range (e.g. every point at the same rate) have no
  // BD value; the row stays, as NaN.
  auto add = [&](const char* axis, auto&& f, double sign) {
    BdRow row{anchor, test, axis, std::numeric_limits<double>::quiet_NaN(), false};
    try {
      const bd::BdResult r = f();
      row.value = sign * r.value;
      row.non_monotone = r.non_monotone_fit;
    } catch (const ConfigError& e) {
      if (std::string(e.what()).find("do not overlap") == std::string::npos) throw;
    }
    out.push_back(row);
  };
  const bd::Curve ap = to_curve(a, Axis::psnr), tp = to_curve(t, Axis::psnr);
  add("bd_rate_pct", [&] { return bd::bd_rate(ap, tp, m); }, 1.0);
  add("bd_psnr_db", [&] { return bd::bd_metric(ap, tp, m); }, 1.0);
  add("bd_msssim_db", [&] { return bd::bd_metric(to_curve(a, Axis::msssim_db), to_curve(t, Axis::msssim_db), m); }, 1.0);
  add("bd_delta_e", [&] { return bd::bd_metric(to_curve(a, Axis::delta_e), to_curve(t, Axis::delta_e), m); }, -1.0);
  return out;
}

inline BdReport bd_report(const std::vector<RdPoint>& pts, const std::string& anchor,
                          const std::vector<std::string>& tests, bd::BdMethod m = bd::BdMethod::cubic) {
  BdReport rep;
  rep.method = m;
  const auto a = curve_points(pts, anchor);
  if (a.empty()) throw ConfigError("bd report: anchor variant '" + anchor + "' has no points");
  for (const auto& t : tests) {
    if (t == anchor) continue;
    for (auto& r : bd_rows(anchor, a, t, curve_points(pts, t), m)) rep.rows.push_back(std::move(r));
  }
  return rep;
}

inline std::string bd_csv(const BdReport& rep) {
  std::string s = "anchor,test,axis,value,fit,non_monotone_fit\n";
  for (const auto& r : rep.rows) {
    s += r.anchor + "," + r.test + "," + r.axis + "," + num(r.value) + "," + bd::method_name(rep.method) + "," +
         (r.non_monotone ? "1" : "0") + "\n";
  }
  return s;
}

// Strict RD ordering across the lambda grid: bpp strictly decreasing and
// PSNR non-increasing as lambda decreases. Returns violation descriptions.
inline std::vector<std::string> rd_violations(const std::vector<RdPoint>& curve) {
  std::vector<std::string> v;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (!(b.bpp < a.bpp)) {
      v.push_back("bpp lambda" + std::to_string(a.lambda_index) + "=" + num(a.bpp) + " -> lambda" +
                  std::to_string(b.lambda_index) + "=" + num(b.bpp));
    }
    if (!(b.psnr <= a.psnr)) {
      v.push_back("psnr lambda" + std::to_string(a.lambda_index) + "=" + num(a.psnr) + " -> lambda" +
                  std::to_string(b.lambda_index) + "=" + num(b.psnr));
    }
  }
  return v;
}

}  // namespace realcam::eval
