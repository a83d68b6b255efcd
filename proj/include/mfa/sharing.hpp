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

#ifndef MFA_SHARING_HPP_
#define MFA_SHARING_HPP_

// Weight sharing between a SuperGenerator and its SubGenerators.
//
// A SubGenerator uses the leading ("front") channels of every layer. Where a
// layer reads a concatenation, each concatenated part keeps its own leading
// channels, so the input-channel index set is a prefix per part rather than a
// single prefix of the whole concatenation. For inputs that are not
// concatenations the two coincide.

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfa/builders.hpp"
#include "mfa/error.hpp"
#include "mfa/graph.hpp"
#include "mfa/weights.hpp"

namespace mfa {

struct Segment {
  std::string key;
  int width = 0;
};
using Layout = std::vector<Segment>;

// Channel layout of every layer output, keyed by layer id (plus kInputId).
inline std::unordered_map<std::string, Layout> channel_layouts(const NetworkGraph& g) {
  std::unordered_map<std::string, Layout> lay{{kInputId, {{kInputId, g.input_channels}}}};
  for (const auto& l : g.layers) {
    const Layout& first = lay.at(l.inputs.at(0));
    Layout out;
    std::visit(overloaded{[&](const layer::Conv& c) { out = {{l.id, c.cout}}; },
                          [&](const layer::LeakyRelu&) { out = first; },
                          [&](const layer::PixelShuffle& p) {
                            int c = 0;
                            for (const auto& s : first) c += s.width;
                            out = {{l.id, c / (p.r * p.r)}};
                          },
                          [&](const layer::Concat&) {
                            for (const auto& in : l.inputs) {
                              const Layout& part = lay.at(in);
                              out.insert(out.end(), part.begin(), part.end());
                            }
                          },
                          [&](const layer::Add&) { out = first; },
                          [&](const layer::Cca&) { out = first; }},
               l.kind);
    lay[l.id] = std::move(out);
  }
  return lay;
}

// Where each sub-store scalar lives in the super store.
struct IndexMap {
  std::vector<int> out;  // super output-channel index per sub output channel
  std::vector<int> in;   // super input-channel index per sub input channel
  int k = 1;
};
using SliceMap = std::map<std::string, IndexMap>;

namespace detail {

inline std::vector<int> prefix(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

inline std::vector<int> segment_prefix(const Layout& sub, const Layout& super, const std::string& where) {
  if (sub.size() != super.size()) throw SliceError("layouts of '" + where + "' differ in structure");
  std::vector<int> idx;
  int offset = 0;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    if (sub[i].key != super[i].key) throw SliceError("layouts of '" + where + "' differ in structure");
    if (sub[i].width > super[i].width) {
      throw SliceError("sub width " + std::to_string(sub[i].width) + " exceeds super width " +
                       std::to_string(super[i].width) + " at '" + where + "'");
    }
    for (int c = 0; c < sub[i].width; ++c) idx.push_back(offset + c);
    offset += super[i].width;
  }
  return idx;
}

inline std::vector<int> checked_prefix(int sub, int super, const std::string& where) {
  if (sub > super) {
    throw SliceError("sub width " + std::to_string(sub) + " exceeds super width " + std::to_string(super) +
                     " at '" + where + "'");
  }
  return prefix(sub);
}

}  // namespace detail

// Index maps for every parameter slot of `sub`, relative to `super`. Both
// graphs must come from the same builder (identical ids and wiring).
inline SliceMap build_slice_map(const NetworkGraph& super, const NetworkGraph& sub) {
  if (super.layers.size() != sub.layers.size()) throw SliceError("graphs have different layer counts");
  const auto lay_super = channel_layouts(super);
  const auto lay_sub = channel_layouts(sub);
  SliceMap map;
  for (std::size_t i = 0; i < sub.layers.size(); ++i) {
    const LayerSpec& ls = sub.layers[i];
    const LayerSpec& lp = super.layers[i];
    if (ls.id != lp.id || ls.kind.index() != lp.kind.index() || ls.inputs != lp.inputs) {
      throw SliceError("graphs diverge at layer '" + ls.id + "'");
    }
    const Layout& in_sub = lay_sub.at(ls.inputs.at(0));
    const Layout& in_super = lay_super.at(lp.inputs.at(0));
    if (const auto* c = std::get_if<layer::Conv>(&ls.kind)) {
      const auto& cp = std::get<layer::Conv>(lp.kind);
      if (c->k != cp.k || c->stride != cp.stride || c->pad != cp.pad) throw SliceError("kernel geometry differs at " + ls.id);
      map[ls.id] = IndexMap{detail::checked_prefix(c->cout, cp.cout, ls.id),
                            detail::segment_prefix(in_sub, in_super, ls.id), c->k};
    } else if (const auto* a = std::get_if<layer::Cca>(&ls.kind)) {
      const auto& ap = std::get<layer::Cca>(lp.kind);
      auto chans = detail::segment_prefix(in_sub, in_super, ls.id);
      auto hidden = detail::checked_prefix(a->hidden, ap.hidden, ls.id);
      map[ls.id + ".down"] = IndexMap{hidden, chans, 1};
      map[ls.id + ".up"] = IndexMap{chans, hidden, 1};
    }
  }
  return map;
}

// Flat offsets into the super weight tensor for every sub weight scalar, in
// the sub tensor's row-major order.
inline std::vector<std::size_t> flat_weight_indices(const IndexMap& m, int super_cin) {
  std::vector<std::size_t> idx;
  idx.reserve(m.out.size() * m.in.size() * m.k * m.k);
  const std::size_t kk = static_cast<std::size_t>(m.k) * m.k;
  for (int o : m.out)
    for (int i : m.in)
      for (std::size_t t = 0; t < kk; ++t)
        idx.push_back((static_cast<std::size_t>(o) * super_cin + i) * kk + t);
  return idx;
}

template <class T>
WeightStore<T> slice_store(const WeightStore<T>& super, const SliceMap& map) {
  WeightStore<T> sub;
  for (const auto& [key, m] : map) {
    const Param<T>& p = super.at(key);
    const auto idx = flat_weight_indices(m, p.weight.shape().c);
    std::vector<T> w(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) w[j] = p.weight[idx[j]];
    std::vector<T> b(m.out.size());
    for (std::size_t j = 0; j < m.out.size(); ++j) b[j] = p.bias.at(static_cast<std::size_t>(m.out[j]));
    sub.entries[key] = Param<T>{
        Tensor<T>(Shape{static_cast<int>(m.out.size()), static_cast<int>(m.in.size()), m.k, m.k}, std::move(w)),
        std::move(b)};
  }
  return sub;
}

// Extracts the SubGenerator for `sub_g` from a store fitted to `super_g`.
template <class T>
WeightStore<T> slice_for_genotype(const WeightStore<T>& super, const Genotype& super_g, const Genotype& sub_g,
                                  const MfanetOptions& opt = {}) {
  if (!sub_g.fits_within(super_g)) {
    throw SliceError("genotype " + sub_g.str() + " is not within " + super_g.str());
  }
  const NetworkGraph gsup = build_mfanet(super_g, opt);
  const NetworkGraph gsub = build_mfanet(sub_g, opt);
  check_store(super, gsup);
  WeightStore<T> out = slice_store(super, build_slice_map(gsup, gsub));
  out.genotype_tag = sub_g;
  return out;
}

// Permutes output channels of `layer_key` and the matching input channels of
// `consumer_key` so output filters are in descending L1 order. Stable on ties.
template <class T>
void sort_channels_by_l1(WeightStore<T>& store, const std::string& layer_key, const std::string& consumer_key) {
  Param<T>& p = store.at(layer_key);
  Param<T>& c = store.at(consumer_key);
  const Shape ps = p.weight.shape();
  const Shape cs = c.weight.shape();
  if (cs.c != ps.n) throw ShapeError("consumer " + consumer_key + " does not read " + layer_key);
  const std::size_t row = static_cast<std::size_t>(ps.c) * ps.h * ps.w;
  std::vector<double> norm(static_cast<std::size_t>(ps.n), 0.0);
  for (int o = 0; o < ps.n; ++o)
    for (std::size_t j = 0; j < row; ++j) norm[o] += std::abs(static_cast<double>(p.weight[o * row + j]));
  std::vector<int> order = detail::prefix(ps.n);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norm[a] > norm[b]; });
  if (std::is_sorted(order.begin(), order.end())) return;

  Tensor<T> w(ps);
  std::vector<T> b(p.bias.size());
  for (int o = 0; o < ps.n; ++o) {
    std::copy_n(p.weight.data().begin() + order[o] * row, row, w.data().begin() + o * row);
    b[o] = p.bias[order[o]];
  }
  p.weight = std::move(w);
  p.bias = std::move(b);

  const std::size_t kk = static_cast<std::size_t>(cs.h) * cs.w;
  Tensor<T> cw(cs);
  for (int o = 0; o < cs.n; ++o)
    for (int i = 0; i < cs.c; ++i)
      for (std::size_t t = 0; t < kk; ++t)
        cw[(static_cast<std::size_t>(o) * cs.c + i) * kk + t] =
            c.weight[(static_cast<std::size_t>(o) * cs.c + order[i]) * kk + t];
  c.weight = std::move(cw);
}

// Pairs (producer, consumer) where channel permutation is function
// preserving: a conv whose output reaches exactly one conv, optionally through
// one leaky ReLU, with no tap or fan-out on the way; plus the hidden units
// inside every CCA.
inline std::vector<std::pair<std::string, std::string>> safe_positions(const NetworkGraph& g) {
  std::unordered_map<std::string, std::vector<int>> consumers;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    for (const auto& in : g.layers[i].inputs) consumers[in].push_back(static_cast<int>(i));
  auto sole_consumer = [&](const LayerSpec& l) -> const LayerSpec* {
    if (l.tap || l.id == g.output_id) return nullptr;
    auto it = consumers.find(l.id);
    if (it == consumers.end() || it->second.size() != 1) return nullptr;
    return &g.layers[static_cast<std::size_t>(it->second.front())];
  };
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& l : g.layers) {
    if (std::holds_alternative<layer::Cca>(l.kind)) {
      out.emplace_back(l.id + ".down", l.id + ".up");
      continue;
    }
    if (!std::holds_alternative<layer::Conv>(l.kind)) continue;
    const LayerSpec* next = sole_consumer(l);
    if (next && std::holds_alternative<layer::LeakyRelu>(next->kind)) next = sole_consumer(*next);
    if (next && std::holds_alternative<layer::Conv>(next->kind) && next->inputs.size() == 1) {
      out.emplace_back(l.id, next->id);
    }
  }
  return out;
}

template <class T>
WeightStore<T> reorder_by_importance(const WeightStore<T>& store, const NetworkGraph& g) {
  check_store(store, g);
  WeightStore<T> out = store;
  for (const auto& [producer, consumer] : safe_positions(g)) sort_channels_by_l1(out, producer, consumer);
  return out;
}

}  // namespace mfa

#endif  // MFA_SHARING_HPP_
