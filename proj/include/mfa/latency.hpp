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

#ifndef MFA_LATENCY_HPP_
#define MFA_LATENCY_HPP_

// Operator latency lookup tables. A network's predicted latency is the sum
// of the table entries of its layers; nothing is interpolated.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfa/builders.hpp"
#include "mfa/costmodel.hpp"
#include "mfa/engine/executor.hpp"
#include "mfa/error.hpp"
#include "mfa/genotype.hpp"
#include "mfa/graph.hpp"
#include "mfa/ops.hpp"
#include "mfa/rng.hpp"

namespace mfa {

// Canonical operator signature. Spatial sizes are those of the layer input.
//   conv|cin|cout|k|stride|pad|h|w
//   lrelu|c|h|w      add|c|h|w (add<n> for n-ary adds)
//   concat|c1,c2,..|h|w      pixel_shuffle|c|r|h|w      cca|c|hidden|h|w
inline std::string op_key(const LayerSpec& l, const std::vector<Shape>& in) {
  const Shape& x = in.at(0);
  const std::string hw = "|" + std::to_string(x.h) + "|" + std::to_string(x.w);
  return std::visit(
      overloaded{[&](const layer::Conv& c) {
                   return "conv|" + std::to_string(c.cin) + "|" + std::to_string(c.cout) + "|" + std::to_string(c.k) +
                          "|" + std::to_string(c.stride) + "|" + std::to_string(c.pad) + hw;
                 },
                 [&](const layer::LeakyRelu&) { return "lrelu|" + std::to_string(x.c) + hw; },
                 [&](const layer::Add&) {
                   const std::string k = in.size() == 2 ? "add" : "add" + std::to_string(in.size());
                   return k + "|" + std::to_string(x.c) + hw;
                 },
                 [&](const layer::Concat&) {
                   std::string parts;
                   for (std::size_t i = 0; i < in.size(); ++i) parts += (i ? "," : "") + std::to_string(in[i].c);
                   return "concat|" + parts + hw;
                 },
                 [&](const layer::PixelShuffle& p) {
                   return "pixel_shuffle|" + std::to_string(x.c) + "|" + std::to_string(p.r) + hw;
                 },
                 [&](const layer::Cca& a) {
                   return "cca|" + std::to_string(a.channels) + "|" + std::to_string(a.hidden) + hw;
                 }},
      l.kind);
}

struct KeyedLayer {
  std::string key;
  const LayerSpec* layer;
  std::vector<Shape> inputs;
};

// Op keys of every layer, in layer order, for a batch-1 input of h x w.
inline std::vector<KeyedLayer> layer_keys(const NetworkGraph& g, int h, int w) {
  std::vector<KeyedLayer> out;
  if (g.layers.empty()) return out;
  const Shape in{1, g.input_channels, h, w};
  const auto shapes = infer_shapes(g, in);
  std::unordered_map<std::string, Shape> by_id{{kInputId, in}};
  for (std::size_t i = 0; i < g.layers.size(); ++i) by_id[g.layers[i].id] = shapes[i];
  for (const auto& l : g.layers) {
    std::vector<Shape> ins;
    for (const auto& id : l.inputs) ins.push_back(by_id.at(id));
    out.push_back({op_key(l, ins), &l, std::move(ins)});
  }
  return out;
}

struct LatencyTable {
  int schema_version = 1;
  std::string device = "host";
  std::map<std::string, double> entries;  // microseconds

  double at(const std::string& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw MissingEntry(key);
    return it->second;
  }
  bool operator==(const LatencyTable&) const = default;
};

inline nlohmann::json to_json(const LatencyTable& t) {
  nlohmann::json e = nlohmann::json::array();
  for (const auto& [k, us] : t.entries) e.push_back({{"key", k}, {"us", us}});  // std::map keeps keys sorted
  return {{"schema_version", t.schema_version}, {"device", t.device}, {"entries", std::move(e)}};
}

inline LatencyTable lut_from_json(const nlohmann::json& j) {
  try {
    LatencyTable t;
    t.schema_version = j.at("schema_version").get<int>();
    if (t.schema_version != 1) throw FormatError("unsupported LUT schema_version " + std::to_string(t.schema_version));
    t.device = j.at("device").get<std::string>();
    for (const auto& e : j.at("entries")) {
      const auto key = e.at("key").get<std::string>();
      const double us = e.at("us").get<double>();
      if (!(us >= 0.0) || !std::isfinite(us)) throw FormatError("LUT entry '" + key + "' has invalid latency");
      if (!t.entries.emplace(key, us).second) throw FormatError("duplicate LUT key '" + key + "'");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed LUT json: ") + e.what());
  }
}

inline void save_lut(const LatencyTable& t, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f << to_json(t).dump(2) << "\n";
}

inline LatencyTable load_lut(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  try {
    return lut_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed LUT json in " + path.string() + ": " + e.what());
  }
}

// Sum of per-layer entries, in layer order.
inline double predict(const NetworkGraph& g, const LatencyTable& lut, int h, int w) {
  double us = 0.0;
  for (const auto& kl : layer_keys(g, h, w)) us += lut.at(kl.key);
  return us;
}

// ---------------------------------------------------------------------------
// Host profiling

namespace detail {

template <class T>
Tensor<T> random_tensor(Shape s, Rng& rng) {
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

// Runs the single operator described by `kl` once on the given operands.
inline void run_op(const KeyedLayer& kl, const std::vector<Tensor<float>>& ins, const std::vector<Param<float>>& ps) {
  std::visit(overloaded{[&](const layer::Conv& c) {
                          auto y = conv2d(ins[0], ps[0].weight, std::span<const float>(ps[0].bias), c.stride, c.pad);
                          (void)y;
                        },
                        [&](const layer::LeakyRelu& a) { auto y = leaky_relu(ins[0], a.slope); (void)y; },
                        [&](const layer::PixelShuffle& p) { auto y = pixel_shuffle(ins[0], p.r); (void)y; },
                        [&](const layer::Concat&) {
                          std::vector<const Tensor<float>*> parts;
                          for (const auto& t : ins) parts.push_back(&t);
                          auto y = concat_channels<float>(std::span<const Tensor<float>* const>(parts));
                          (void)y;
                        },
                        [&](const layer::Add&) {
                          Tensor<float> acc = add(ins[0], ins[1]);
                          for (std::size_t k = 2; k < ins.size(); ++k) acc = add(acc, ins[k]);
                        },
                        [&](const layer::Cca&) {
                          CcaCache<float> cache;
                          auto y = cca_forward(ins[0], ps[0], ps[1], cache, nullptr);
                          (void)y;
                        }},
             kl.layer->kind);
}

}  // namespace detail

struct ProfileInput {
  NetworkGraph graph;
  int h = 0;
  int w = 0;
};

// Median wall time per distinct operator, measured single-threaded after
// `warmup` discarded runs.
inline LatencyTable profile(const std::vector<ProfileInput>& graphs, int reps, int warmup, std::uint64_t seed,
                            const std::string& device = "host") {
  if (reps < 3) throw ConfigError("profile needs at least 3 repetitions");
  LatencyTable t;
  t.device = device;
  const Rng root(seed);
  for (const auto& pi : graphs) {
    for (const auto& kl : layer_keys(pi.graph, pi.h, pi.w)) {
      if (t.entries.contains(kl.key)) continue;
      Rng rng = root.split(fnv1a(kl.key));
      std::vector<Tensor<float>> ins;
      for (const auto& s : kl.inputs) ins.push_back(detail::random_tensor<float>(s, rng));
      std::vector<Param<float>> ps;
      if (const auto* c = std::get_if<layer::Conv>(&kl.layer->kind)) {
        ps.push_back({detail::random_tensor<float>(Shape{c->cout, c->cin, c->k, c->k}, rng),
                      std::vector<float>(static_cast<std::size_t>(c->cout), 0.0f)});
      } else if (const auto* a = std::get_if<layer::Cca>(&kl.layer->kind)) {
        ps.push_back({detail::random_tensor<float>(Shape{a->hidden, a->channels, 1, 1}, rng),
                      std::vector<float>(static_cast<std::size_t>(a->hidden), 0.0f)});
        ps.push_back({detail::random_tensor<float>(Shape{a->channels, a->hidden, 1, 1}, rng),
                      std::vector<float>(static_cast<std::size_t>(a->channels), 0.0f)});
      }
      for (int i = 0; i < warmup; ++i) detail::run_op(kl, ins, ps);
      std::vector<double> us;
      for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        detail::run_op(kl, ins, ps);
        const auto t1 = std::chrono::steady_clock::now();
        us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
      }
      std::nth_element(us.begin(), us.begin() + static_cast<std::ptrdiff_t>(us.size() / 2), us.end());
      t.entries[kl.key] = std::max(0.0, us[us.size() / 2]);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic tables

enum class LutModel { FlopsProportional, RandomSeeded };

// Every op key reachable from the genotype space at the given LR size,
// mapped to its analytic FLOP count.
inline std::map<std::string, std::uint64_t> space_keys(const GeneSpace& space, const MfanetOptions& opt, int h,
                                                       int w) {
  std::map<std::string, std::uint64_t> keys;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const NetworkGraph g = build_mfanet(space.at(i), opt);
    const auto kls = layer_keys(g, h, w);
    const auto cost = cost_report(g, h, w);
    for (std::size_t k = 0; k < kls.size(); ++k) keys.emplace(kls[k].key, cost.per_layer[k].flops);
  }
  return keys;
}

// FlopsProportional: us = alpha * flops. RandomSeeded: us = alpha * flops *
// U[0.5, 1.5), the factor drawn from a stream keyed by (seed, op key).
inline LatencyTable synth_lut(const GeneSpace& space, const MfanetOptions& opt, int h, int w, LutModel model,
                              std::uint64_t seed = 0, double alpha = 1e-4) {
  LatencyTable t;
  t.device = model == LutModel::FlopsProportional ? "synthetic:flops_proportional"
                                                  : "synthetic:random_seeded:" + std::to_string(seed);
  const Rng root(seed);
  for (const auto& [key, flops] : space_keys(space, opt, h, w)) {
    double us = alpha * static_cast<double>(flops);
    if (model == LutModel::RandomSeeded) {
      Rng r = root.split(fnv1a(key));
      us *= r.uniform(0.5, 1.5);
    }
    t.entries[key] = us;
  }
  return t;
}

}  // namespace mfa

#endif  // MFA_LATENCY_HPP_
