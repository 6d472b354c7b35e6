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

// Carry-less 32-bit range coder (Subbotin) over 16-bit frequency tables.
// Integer arithmetic only, so payloads are identical on every platform.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "realcam/entropy.hpp"
#include "realcam/errors.hpp"

namespace realcam::entropy {

class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    range_ >>= kPrecisionBits;
    low_ += cum * range_;
    range_ *= freq;
    normalize();
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
    }
    return std::move(out_);
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24, kBot = 1u << 16;

  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) >= kTop) {
        if (range_ >= kBot) break;
        range_ = (0u - low_) & (kBot - 1);
      }
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
  }

  // Cumulative count the next symbol falls into.
  std::uint32_t peek() {
    range_ >>= kPrecisionBits;
    const std::uint32_t v = (code_ - low_) / range_;
    if (v >= kTotal) {
      throw FormatError("corrupted payload: cumulative count " + std::to_string(v) +
                        " out of range near byte offset " + std::to_string(pos_));
    }
    return v;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    low_ += cum * range_;
    range_ *= freq;
    for (;;) {
      if ((low_ ^ (low_ + range_)) >= kTop) {
        if (range_ >= kBot) break;
        range_ = (0u - low_) & (kBot - 1);
      }
      code_ = (code_ << 8) | next();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::size_t consumed() const { return pos_; }

 private:
  static constexpr std::uint32_t kTop = 1u << 24, kBot = 1u << 16;

  std::uint32_t next() {
    if (pos_ >= n_) {
      throw FormatError("truncated payload: read past end at byte offset " + std::to_string(pos_));
    }
    return p_[pos_++];
  }

  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::uint32_t low_ = 0, code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

// Codes the symbols of q channel by channel, raster order within a channel.
inline std::vector<std::uint8_t> rc_encode(const Quantized& q, const std::vector<CdfTable>& tables) {
  if (q.shape.size() != 3 || static_cast<std::size_t>(q.shape[0]) != tables.size()) {
    throw ShapeError("rc_encode: latent " + shape_str(q.shape) + " needs one table per channel, got " +
                     std::to_string(tables.size()));
  }
  const std::size_t plane = static_cast<std::size_t>(q.shape[1]) * q.shape[2];
  RangeEncoder enc;
  for (std::size_t i = 0; i < q.symbols.size(); ++i) {
    const int s = q.symbols[i];
    if (s < kSymMin || s > kSymMax) {
      throw ShapeError("rc_encode: symbol " + std::to_string(s) + " outside support at channel " +
                       std::to_string(i / plane) + ", index " + std::to_string(i % plane));
    }
    const CdfTable& t = tables[i / plane];
    enc.encode(t.cdf[s - kSymMin], t.freq[s - kSymMin]);
  }
  return enc.finish();
}

inline Quantized rc_decode(const std::vector<std::uint8_t>& payload, const Shape& shape,
                           const std::vector<CdfTable>& tables) {
  if (shape.size() != 3 || static_cast<std::size_t>(shape[0]) != tables.size()) {
    throw ShapeError("rc_decode: latent " + shape_str(shape) + " needs one table per channel");
  }
  Quantized q{shape, std::vector<int>(shape_numel(shape)), 0};
  const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
  RangeDecoder dec(payload.data(), payload.size());
  for (std::size_t i = 0; i < q.symbols.size(); ++i) {
    const CdfTable& t = tables[i / plane];
    const std::uint32_t v = dec.peek();
    // Largest k with cdf[k] <= v.
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), v);
    const int k = static_cast<int>(it - t.cdf.begin()) - 1;
    dec.consume(t.cdf[k], t.freq[k]);
    q.symbols[i] = k + kSymMin;
  }
  if (dec.consumed() != payload.size()) {
    throw FormatError("corrupted payload: decoding ended at byte offset " +
                      std::to_string(dec.consumed()) + " of " + std::to_string(payload.size()));
  }
  return q;
}

}  // namespace realcam::entropy
