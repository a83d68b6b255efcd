// Copyright 2026 The mfakit Authors.
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

#ifndef MFA_WEIGHTS_HPP_
#define MFA_WEIGHTS_HPP_

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfa/builders.hpp"
#include "mfa/error.hpp"
#include "mfa/genotype.hpp"
#include "mfa/graph.hpp"
#include "mfa/rng.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

template <class T>
struct Param {
  Tensor<T> weight;  // (cout, cin, k, k)
  std::vector<T> bias;

  bool operator==(const Param&) const = default;
};

// Parameter slots implied by a graph: one per conv, two per CCA
// ("<id>.down" and "<id>.up").
struct ParamSlot {
  std::string key;
  std::string layer_id;
  Shape weight;
  float init_gain = 1.0f;
};

inline std::vector<ParamSlot> param_slots(const NetworkGraph& g) {
  std::vector<ParamSlot> slots;
  for (const auto& l : g.layers) {
    if (const auto* c = std::get_if<layer::Conv>(&l.kind)) {
      slots.push_back({l.id, l.id, Shape{c->cout, c->cin, c->k, c->k}, l.init_gain});
    } else if (const auto* a = std::get_if<layer::Cca>(&l.kind)) {
      slots.push_back({l.id + ".down", l.id, Shape{a->hidden, a->channels, 1, 1}, l.init_gain});
      slots.push_back({l.id + ".up", l.id, Shape{a->channels, a->hidden, 1, 1}, l.init_gain});
    }
  }
  return slots;
}

template <class T>
class WeightStore {
 public:
  std::map<std::string, Param<T>> entries;
  std::optional<Genotype> genotype_tag;

  const Param<T>& at(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw ShapeError("weight store has no entry '" + key + "'");
    return it->second;
  }
  Param<T>& at(const std::string& key) {
    auto it = entries.find(key);
    if (it == entries.end()) throw ShapeError("weight store has no entry '" + key + "'");
    return it->second;
  }
  bool contains(const std::string& key) const { return entries.count(key) != 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, p] : entries) n += p.weight.size() + p.bias.size();
    return n;
  }

  // Same layout, all zeros (gradient accumulators).
  WeightStore zeros_like() const {
    WeightStore z;
    z.genotype_tag = genotype_tag;
    for (const auto& [k, p] : entries) z.entries[k] = Param<T>{Tensor<T>(p.weight.shape()), std::vector<T>(p.bias.size())};
    return z;
  }

  template <class U>
  WeightStore<U> cast() const {
    WeightStore<U> o;
    o.genotype_tag = genotype_tag;
    for (const auto& [k, p] : entries)
      o.entries[k] = Param<U>{p.weight.template cast<U>(), std::vector<U>(p.bias.begin(), p.bias.end())};
    return o;
  }

  // Calls f(span) on every weight and bias array in key order.
  template <class F>
  void for_each_array(F&& f) {
    for (auto& [k, p] : entries) {
      f(p.weight.data());
      f(std::span<T>(p.bias));
    }
  }

  bool operator==(const WeightStore&) const = default;
};

template <class T>
bool bit_equal(const WeightStore<T>& a, const WeightStore<T>& b) {
  if (a.genotype_tag != b.genotype_tag || a.entries.size() != b.entries.size()) return false;
  for (const auto& [k, p] : a.entries) {
    auto it = b.entries.find(k);
    if (it == b.entries.end()) return false;
    if (!bit_equal(p.weight, it->second.weight)) return false;
    if (p.bias.size() != it->second.bias.size() ||
        std::memcmp(p.bias.data(), it->second.bias.data(), p.bias.size() * sizeof(T)) != 0)
      return false;
  }
  return true;
}

// Lists every mismatch between a store and the slots its graph needs.
template <class T>
std::vector<std::string> store_mismatches(const WeightStore<T>& store, const NetworkGraph& g) {
  std::vector<std::string> problems;
  const auto slots = param_slots(g);
  for (const auto& s : slots) {
    auto it = store.entries.find(s.key);
    if (it == store.entries.end()) {
      problems.push_back("missing entry " + s.key);
    } else if (!(it->second.weight.shape() == s.weight) ||
               it->second.bias.size() != static_cast<std::size_t>(s.weight.n)) {
      problems.push_back("entry " + s.key + " has shape " + it->second.weight.shape().str() + ", graph needs " +
                         s.weight.str());
    }
  }
  if (store.entries.size() != slots.size()) problems.push_back("store has entries the graph does not use");
  return problems;
}

template <class T>
void check_store(const WeightStore<T>& store, const NetworkGraph& g) {
  const auto problems = store_mismatches(store, g);
  if (!problems.empty()) throw ShapeError("weights do not fit graph: " + problems.front());
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Fan-in normal initialization, std = gain * sqrt(2 / fan_in); biases zero.
// Every slot draws from its own stream keyed by name, so the values of one
// layer do not depend on which other layers exist.
template <class T = float>
WeightStore<T> init_weights(const NetworkGraph& g, std::uint64_t seed) {
  WeightStore<T> store;
  const Rng root(seed);
  for (const auto& s : param_slots(g)) {
    Rng rng = root.split(fnv1a(s.key));
    const double fan_in = static_cast<double>(s.weight.c) * s.weight.h * s.weight.w;
    const double stddev = s.init_gain * std::sqrt(2.0 / fan_in);
    Tensor<T> w(s.weight);
    for (auto& v : w.data()) v = static_cast<T>(stddev * rng.normal());
    store.entries[s.key] = Param<T>{std::move(w), std::vector<T>(static_cast<std::size_t>(s.weight.n), T{0})};
  }
  return store;
}

// Fixed, seeded stand-in for the pretrained perceptual feature network.
template <class T = float>
std::pair<NetworkGraph, WeightStore<T>> build_percep_extractor(std::uint64_t seed) {
  NetworkGraph g = build_percep_graph();
  WeightStore<T> w = init_weights<T>(g, seed);
  return {std::move(g), std::move(w)};
}

// ---------------------------------------------------------------------------
// "MFAW" binary format, little-endian:
//   magic "MFAW" | u32 version (1) | u32 entry count
//   per entry: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 data
// Each parameter contributes "<key>.weight" (rank 4) and "<key>.bias" (rank 1);
// the genotype tag, when present, is stored as "meta.genotype" (rank 1, 8 values).

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline void put_entry(std::string& out, const std::string& name, const std::vector<std::uint32_t>& dims,
                      const std::vector<float>& values) {
  if (name.size() > 0xffff) throw FormatError("entry name too long");
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  out.push_back(static_cast<char>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  for (float v : values) put_f32(out, v);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("weight file truncated");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string encode_weights(const WeightStore<T>& store) {
  std::string out = "MFAW";
  detail::put_u32(out, 1);
  const std::uint32_t count = static_cast<std::uint32_t>(2 * store.entries.size() + (store.genotype_tag ? 1 : 0));
  detail::put_u32(out, count);
  for (const auto& [key, p] : store.entries) {
    const Shape& s = p.weight.shape();
    detail::put_entry(out, key + ".weight",
                      {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                       static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
                      std::vector<float>(p.weight.data().begin(), p.weight.data().end()));
    detail::put_entry(out, key + ".bias", {static_cast<std::uint32_t>(p.bias.size())},
                      std::vector<float>(p.bias.begin(), p.bias.end()));
  }
  if (store.genotype_tag) {
    std::vector<float> genes;
    for (int gv : store.genotype_tag->genes()) genes.push_back(static_cast<float>(gv));
    detail::put_entry(out, "meta.genotype", {kGeneCount}, genes);
  }
  return out;
}

template <class T = float>
WeightStore<T> decode_weights(const std::string& bytes) {
  detail::ByteReader r(bytes);
  const auto* magic = r.take(4);
  if (std::memcmp(magic, "MFAW", 4) != 0) throw FormatError("bad magic, not an MFAW weight file");
  const std::uint32_t version = r.u32();
  if (version != 1) throw FormatError("unsupported MFAW version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  WeightStore<T> store;
  std::map<std::string, Tensor<T>> weights;
  std::map<std::string, std::vector<T>> biases;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t len = r.u16();
    const auto* nb = r.take(len);
    const std::string name(reinterpret_cast<const char*>(nb), len);
    const std::uint8_t rank = r.u8();
    std::vector<std::uint32_t> dims(rank);
    std::uint64_t numel = 1;
    for (auto& d : dims) {
      d = r.u32();
      numel *= d;
    }
    if (numel > (1ULL << 32)) throw FormatError("entry " + name + " is implausibly large");
    std::vector<T> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = static_cast<T>(r.f32());
    auto ends_with = [&](std::string_view suf) {
      return name.size() > suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (name == "meta.genotype") {
      if (rank != 1 || dims[0] != kGeneCount) throw FormatError("malformed genotype tag");
      std::array<int, kGeneCount> g{};
      for (int i = 0; i < kGeneCount; ++i) g[i] = static_cast<int>(values[i]);
      store.genotype_tag = Genotype(g);
    } else if (ends_with(".weight")) {
      if (rank != 4) throw FormatError("weight entry " + name + " must have rank 4");
      weights[name.substr(0, name.size() - 7)] =
          Tensor<T>(Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                          static_cast<int>(dims[3])},
                    std::move(values));
    } else if (ends_with(".bias")) {
      if (rank != 1) throw FormatError("bias entry " + name + " must have rank 1");
      biases[name.substr(0, name.size() - 5)] = std::move(values);
    } else {
      throw FormatError("unrecognised entry name '" + name + "'");
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after last entry");
  if (weights.size() != biases.size()) throw FormatError("weight/bias entries are not paired");
  for (auto& [key, w] : weights) {
    auto it = biases.find(key);
    if (it == biases.end() || it->second.size() != static_cast<std::size_t>(w.shape().n)) {
      throw FormatError("entry " + key + " has no matching bias");
    }
    store.entries[key] = Param<T>{std::move(w), std::move(it->second)};
  }
  return store;
}

template <class T>
void save_weights(const WeightStore<T>& store, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("short write to " + path.string());
}

template <class T = float>
WeightStore<T> load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_weights<T>(bytes);
}

}  // namespace mfa

#endif  // MFA_WEIGHTS_HPP_
