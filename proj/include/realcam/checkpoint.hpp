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

// Named parameter storage and the RCPT checkpoint container.
//
// Layout (little-endian): "RCPT" | version u8 | config-text length u32 |
// config text | record count u32 | per record: name length u32, name,
// rank u32, dims u32 x rank, f32 payload.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "realcam/bytes.hpp"
#include "realcam/errors.hpp"
#include "realcam/tensor.hpp"

namespace realcam {

// Insertion-ordered map of parameter tensors. Order is part of the
// checkpoint bytes and of the optimiser state, so it must be stable.
class ParamStore {
 public:
  void add(const std::string& name, Tensor<float> t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<float>& at(const std::string& name) { return entries_[find(name)].second; }
  const Tensor<float>& at(const std::string& name) const { return entries_[find(name)].second; }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor<float>& tensor(std::size_t i) { return entries_[i].second; }
  const Tensor<float>& tensor(std::size_t i) const { return entries_[i].second; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<float>>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct Checkpoint {
  std::string config_text;
  ParamStore params;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  ByteWriter w;
  w.str("RCPT");
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.config_text.size()));
  w.str(ck.config_text);
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& name = ck.params.name(i);
    const auto& t = ck.params.tensor(i);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.vec()) w.f32(v);
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.str(4) != "RCPT") throw FormatError("checkpoint: bad magic (expected RCPT)");
  if (const int v = r.u8(); v != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.config_text = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) {
      throw FormatError("checkpoint: bad rank " + std::to_string(rank) + " for '" + name + "'");
    }
    Shape s;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 24)) throw FormatError("checkpoint: bad dim for '" + name + "'");
      s.push_back(static_cast<int>(d));
    }
    const std::size_t n = shape_numel(s);
    if (n * 4 > r.remaining()) {
      throw FormatError("checkpoint: truncated at byte offset " + std::to_string(r.pos()) +
                        " in '" + name + "'");
    }
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    ck.params.add(name, Tensor<float>(std::move(s), std::move(data)));
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace realcam
