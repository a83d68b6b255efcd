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

#ifndef MFA_COSTMODEL_HPP_
#define MFA_COSTMODEL_HPP_

// Analytic parameter / FLOP / memory-access accounting. The rules mirror
// what the kernels in ops.hpp count while running, so instrumented_forward
// is an exact oracle for count_flops and memory_access_cost.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfa/engine/executor.hpp"
#include "mfa/graph.hpp"

namespace mfa {

struct LayerCost {
  std::string id;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t mac_bytes = 0;
};

struct CostReport {
  int input_h = 0;
  int input_w = 0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t mac_bytes = 0;
  std::vector<LayerCost> per_layer;
};

namespace detail {

inline std::uint64_t conv_params(const layer::Conv& c) {
  return static_cast<std::uint64_t>(c.cout) * c.cin * c.k * c.k + static_cast<std::uint64_t>(c.cout);
}

inline std::uint64_t cca_params(const layer::Cca& a) {
  const auto c = static_cast<std::uint64_t>(a.channels), h = static_cast<std::uint64_t>(a.hidden);
  return (h * c + h) + (c * h + c);
}

inline std::uint64_t numel(const Shape& s) { return s.numel(); }

}  // namespace detail

inline std::uint64_t layer_params(const LayerSpec& l) {
  if (const auto* c = std::get_if<layer::Conv>(&l.kind)) return detail::conv_params(*c);
  if (const auto* a = std::get_if<layer::Cca>(&l.kind)) return detail::cca_params(*a);
  return 0;
}

// Per-layer costs for a batch-1 input of the given spatial size.
inline CostReport cost_report(const NetworkGraph& g, int h, int w) {
  CostReport r;
  r.input_h = h;
  r.input_w = w;
  if (g.layers.empty()) return r;
  const Shape in{1, g.input_channels, h, w};
  const auto shapes = infer_shapes(g, in);
  std::unordered_map<std::string, Shape> by_id{{kInputId, in}};
  for (std::size_t i = 0; i < g.layers.size(); ++i) by_id[g.layers[i].id] = shapes[i];

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    const Shape& out = shapes[i];
    const std::uint64_t out_n = out.numel();
    LayerCost lc{l.id, kind_name(l.kind), layer_params(l), 0, 0};
    std::visit(overloaded{[&](const layer::Conv& c) {
                            lc.flops = out_n * (2ULL * c.cin * c.k * c.k + 1);
                          },
                          [&](const layer::LeakyRelu&) { lc.flops = out_n; },
                          [&](const layer::PixelShuffle&) {},
                          [&](const layer::Concat&) {},
                          [&](const layer::Add&) { lc.flops = out_n * (l.inputs.size() - 1); },
                          [&](const layer::Cca& a) {
                            const std::uint64_t c = static_cast<std::uint64_t>(out.n) * a.channels;
                            const std::uint64_t hd = static_cast<std::uint64_t>(out.n) * a.hidden;
                            const std::uint64_t hw = out.plane();
                            lc.flops = c * (4 * hw + 3)           // mean and std
                                       + c                        // mean + std
                                       + hd * (2ULL * a.channels + 1)  // down 1x1
                                       + hd                       // relu
                                       + c * (2ULL * a.hidden + 1)     // up 1x1
                                       + c                        // sigmoid
                                       + out_n;                   // rescale
                          }},
               l.kind);
    std::uint64_t scalars = out_n + lc.params;
    for (const auto& id : l.inputs) scalars += by_id.at(id).numel();
    lc.mac_bytes = scalars * kBytesPerScalar;
    r.params += lc.params;
    r.flops += lc.flops;
    r.mac_bytes += lc.mac_bytes;
    r.per_layer.push_back(std::move(lc));
  }
  return r;
}

inline std::uint64_t count_params(const NetworkGraph& g) {
  std::uint64_t n = 0;
  for (const auto& l : g.layers) n += layer_params(l);
  return n;
}

inline std::uint64_t count_flops(const NetworkGraph& g, int h, int w) { return cost_report(g, h, w).flops; }

inline std::uint64_t memory_access_cost(const NetworkGraph& g, int h, int w) {
  return cost_report(g, h, w).mac_bytes;
}

template <class T>
struct InstrumentedResult {
  Tensor<T> output;
  std::uint64_t flops = 0;
  std::uint64_t bytes = 0;
};

template <class T>
InstrumentedResult<T> instrumented_forward(const NetworkGraph& g, const WeightStore<T>& w, const Tensor<T>& input) {
  OpCounter counter;
  auto r = forward(g, w, input, false, &counter);
  return {std::move(r.output), counter.flops, counter.bytes};
}

inline nlohmann::json to_json(const CostReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.per_layer) {
    layers.push_back({{"id", l.id}, {"kind", l.kind}, {"params", l.params}, {"flops", l.flops},
                      {"mac_bytes", l.mac_bytes}});
  }
  return {{"input_hw", {r.input_h, r.input_w}},
          {"params", r.params},
          {"param_mb", static_cast<double>(r.params) / 1e6},
          {"flops", r.flops},
          {"mac_bytes", r.mac_bytes},
          {"per_layer", std::move(layers)}};
}

// Fixed-width table, one row per layer plus a total row.
inline std::string format_table(const CostReport& r) {
  std::size_t idw = 5;
  for (const auto& l : r.per_layer) idw = std::max(idw, l.id.size());
  auto pad = [](std::string s, std::size_t n, bool left) {
    if (s.size() >= n) return s;
    return left ? s + std::string(n - s.size(), ' ') : std::string(n - s.size(), ' ') + s;
  };
  std::string out = pad("layer", idw, true) + "  " + pad("kind", 13, true) + pad("params", 12, false) +
                    pad("flops", 16, false) + pad("mac_bytes", 16, false) + "\n";
  auto row = [&](const std::string& id, const std::string& kind, std::uint64_t p, std::uint64_t f, std::uint64_t m) {
    out += pad(id, idw, true) + "  " + pad(kind, 13, true) + pad(std::to_string(p), 12, false) +
           pad(std::to_string(f), 16, false) + pad(std::to_string(m), 16, false) + "\n";
  };
  for (const auto& l : r.per_layer) row(l.id, l.kind, l.params, l.flops, l.mac_bytes);
  row("total", "", r.params, r.flops, r.mac_bytes);
  return out;
}

}  // namespace mfa

#endif  // MFA_COSTMODEL_HPP_
