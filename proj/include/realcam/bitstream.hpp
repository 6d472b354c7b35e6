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

// RCBS container: fixed 32-byte little-endian header + range-coded payload.
//
//   "RCBS" | version u8 | raw H, W u16 | crop h, w u16 | latent C, H, W u16 |
//   model id u64 | lambda index u8 | payload bits u32 | payload

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "realcam/bytes.hpp"
#include "realcam/errors.hpp"

namespace realcam::entropy {

inline constexpr std::array<double, 4> kLambdaGrid{0.1, 0.025, 0.01, 0.005};
inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 32;

inline double lambda_at(int index) {
  if (index < 0 || index >= static_cast<int>(kLambdaGrid.size())) {
    throw ConfigError("lambda index " + std::to_string(index) + " outside 0.." +
                      std::to_string(kLambdaGrid.size() - 1));
  }
  return kLambdaGrid[static_cast<std::size_t>(index)];
}

struct StreamHeader {
  std::uint16_t raw_h = 0, raw_w = 0;
  std::uint16_t crop_h = 0, crop_w = 0;
  std::uint16_t latent_c = 0, latent_h = 0, latent_w = 0;
  std::uint64_t model_id = 0;
  std::uint8_t lambda_index = 0;

  friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

struct Bitstream {
  StreamHeader header;
  std::vector<std::uint8_t> payload;

  std::uint64_t payload_bits() const { return 8ull * payload.size(); }
  std::uint64_t total_bits() const { return 8ull * kHeaderBytes + payload_bits(); }
  double bpp() const { return double(total_bits()) / (double(header.crop_h) * header.crop_w); }

  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

inline std::vector<std::uint8_t> serialize(const Bitstream& b) {
  if (b.header.lambda_index >= kLambdaGrid.size()) {
    throw ConfigError("bitstream: lambda index " + std::to_string(b.header.lambda_index) + " out of range");
  }
  if (b.payload_bits() > 0xFFFFFFFFull) throw FormatError("bitstream: payload too large");
  ByteWriter w;
  w.str("RCBS");
  w.u8(kStreamVersion);
  const auto& h = b.header;
  for (std::uint16_t v : {h.raw_h, h.raw_w, h.crop_h, h.crop_w, h.latent_c, h.latent_h, h.latent_w}) w.u16(v);
  w.u64(h.model_id);
  w.u8(h.lambda_index);
  w.u32(static_cast<std::uint32_t>(b.payload_bits()));
  w.bytes(b.payload.data(), b.payload.size());
  return w.take();
}

inline Bitstream deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "RCBS") {
    throw FormatError("bitstream: bad magic (expected RCBS)");
  }
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("bitstream: truncated header (" + std::to_string(bytes.size()) + " of " +
                      std::to_string(kHeaderBytes) + " bytes)");
  }
  ByteReader r(bytes, "bitstream");
  r.seek(4);
  if (const int v = r.u8(); v != kStreamVersion) {
    throw FormatError("bitstream: unsupported version " + std::to_string(v));
  }
  Bitstream b;
  auto& h = b.header;
  h.raw_h = r.u16();
  h.raw_w = r.u16();
  h.crop_h = r.u16();
  h.crop_w = r.u16();
  h.latent_c = r.u16();
  h.latent_h = r.u16();
  h.latent_w = r.u16();
  h.model_id = r.u64();
  h.lambda_index = r.u8();
  const std::uint32_t bits = r.u32();
  if (h.lambda_index >= kLambdaGrid.size()) {
    throw FormatError("bitstream: lambda index " + std::to_string(h.lambda_index) + " out of range");
  }
  if (h.crop_h == 0 || h.crop_w == 0 || h.latent_c == 0 || h.latent_h == 0 || h.latent_w == 0) {
    throw FormatError("bitstream: zero dimension in header");
  }
  if (bits % 8) throw FormatError("bitstream: payload bit length " + std::to_string(bits) + " not byte aligned");
  const std::size_t want = bits / 8;
  if (r.remaining() < want) {
    throw FormatError("bitstream: truncated payload at byte offset " + std::to_string(bytes.size()) +
                      " (expected " + std::to_string(kHeaderBytes + want) + ")");
  }
  if (r.remaining() > want) {
    throw FormatError("bitstream: " + std::to_string(r.remaining() - want) + " trailing bytes after payload");
  }
  const std::uint8_t* p = r.take(want);
  b.payload.assign(p, p + want);
  return b;
}

}  // namespace realcam::entropy
