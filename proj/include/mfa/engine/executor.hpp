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

#ifndef MFA_ENGINE_EXECUTOR_HPP_
#define MFA_ENGINE_EXECUTOR_HPP_

// Forward evaluation of a NetworkGraph with tap capture, and the matching
// reverse-mode pass producing gradients for every parameter and the input.

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/graph.hpp"
#include "mfa/ops.hpp"
#include "mfa/tensor.hpp"
#include "mfa/weights.hpp"

namespace mfa {

template <class T>
using TapSet = std::map<std::string, Tensor<T>>;

template <class T>
struct CcaCache {
  Tensor<T> mean;
  Tensor<T> std;
  Tensor<T> hidden_pre;
  Tensor<T> hidden;
  Tensor<T> gate;
};

// Everything the reverse pass needs from a forward evaluation.
template <class T>
struct Trace {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;
  std::vector<CcaCache<T>> cca;
};

template <class T>
struct ForwardResult {
  Tensor<T> output;
  TapSet<T> taps;
  Trace<T> trace;
};

template <class T>
struct Gradients {
  WeightStore<T> params;
  Tensor<T> input;
};

// Bytes per scalar under the memory-access accounting rule.
inline constexpr std::uint64_t kBytesPerScalar = 4;

namespace detail {

inline std::unordered_map<std::string, int> index_layers(const NetworkGraph& g) {
  std::unordered_map<std::string, int> idx{{kInputId, -1}};
  for (std::size_t i = 0; i < g.layers.size(); ++i) idx[g.layers[i].id] = static_cast<int>(i);
  return idx;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x, OpCounter* counter) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  count(counter, x.size());
  return out;
}

template <class T>
Tensor<T> cca_forward(const Tensor<T>& x, const Param<T>& down, const Param<T>& up, CcaCache<T>& cache,
                      OpCounter* counter) {
  auto st = channel_stats(x, counter);
  Tensor<T> summary = add(st.mean, st.std, counter);
  cache.hidden_pre = conv2d(summary, down.weight, std::span<const T>(down.bias), 1, 0, counter);
  cache.hidden = relu(cache.hidden_pre, counter);
  Tensor<T> gate_pre = conv2d(cache.hidden, up.weight, std::span<const T>(up.bias), 1, 0, counter);
  cache.gate = sigmoid(gate_pre, counter);
  cache.mean = std::move(st.mean);
  cache.std = std::move(st.std);
  return scale_channels(x, cache.gate, counter);
}

template <class T>
Tensor<T> cca_backward(const Tensor<T>& x, const Param<T>& down, const Param<T>& up, const CcaCache<T>& cache,
                       const Tensor<T>& dy, Param<T>& gdown, Param<T>& gup) {
  const Shape& s = x.shape();
  const std::size_t hw = s.plane();
  Tensor<T> dx(s);
  Tensor<T> dgate_pre(Shape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T gte = cache.gate.at(n, c, 0, 0);
      auto xp = x.plane(n, c);
      auto gp = dy.plane(n, c);
      auto dp = dx.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        acc += gp[i] * xp[i];
        dp[i] = gp[i] * gte;
      }
      dgate_pre.at(n, c, 0, 0) = acc * gte * (T{1} - gte);
    }
  Tensor<T> dhidden;
  conv2d_backward(cache.hidden, up.weight, 1, 0, dgate_pre, &dhidden, &gup.weight, std::span<T>(gup.bias));
  for (std::size_t i = 0; i < dhidden.size(); ++i)
    if (!(cache.hidden_pre[i] > T{0})) dhidden[i] = T{0};
  Tensor<T> summary(Shape{s.n, s.c, 1, 1});
  for (std::size_t i = 0; i < summary.size(); ++i) summary[i] = cache.mean[i] + cache.std[i];
  Tensor<T> dsummary;
  conv2d_backward(summary, down.weight, 1, 0, dhidden, &dsummary, &gdown.weight, std::span<T>(gdown.bias));
  // summary = mean + std; d mean/dx = 1/hw, d std/dx = (x - mean) / (hw * std).
  const T inv_hw = T{1} / static_cast<T>(hw);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T ds = dsummary.at(n, c, 0, 0);
      const T m = cache.mean.at(n, c, 0, 0);
      const T sd = cache.std.at(n, c, 0, 0);
      const T k_std = sd > T{0} ? ds * inv_hw / sd : T{0};
      auto xp = x.plane(n, c);
      auto dp = dx.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dp[i] += ds * inv_hw + k_std * (xp[i] - m);
    }
  return dx;
}

template <class T>
void accumulate(Tensor<T>& target, Tensor<T>&& g) {
  if (target.empty()) {
    target = std::move(g);
    return;
  }
  if (!(target.shape() == g.shape())) throw ShapeError("gradient shape mismatch during accumulation");
  for (std::size_t i = 0; i < g.size(); ++i) target[i] += g[i];
}

}  // namespace detail

// Evaluates the graph in layer order. Taps are returned iff `capture`.
// With a counter, every executed floating-point operation is counted into
// counter->flops and every activation/parameter scalar touched per layer
// (inputs + output + parameters, 4 bytes each) into counter->bytes.
template <class T>
ForwardResult<T> forward(const NetworkGraph& g, const WeightStore<T>& w, const Tensor<T>& input, bool capture = true,
                         OpCounter* counter = nullptr) {
  if (input.shape().c != g.input_channels) {
    throw ShapeError("graph expects " + std::to_string(g.input_channels) + " input channels, got " +
                     input.shape().str());
  }
  const auto idx = detail::index_layers(g);
  ForwardResult<T> r;
  r.trace.input = input;
  r.trace.outputs.resize(g.layers.size());
  r.trace.cca.resize(g.layers.size());
  auto value = [&](const std::string& id) -> const Tensor<T>& {
    auto it = idx.find(id);
    if (it == idx.end()) throw GraphError("unknown layer input '" + id + "'");
    return it->second < 0 ? r.trace.input : r.trace.outputs[static_cast<std::size_t>(it->second)];
  };
  for (std::size_t li = 0; li < g.layers.size(); ++li) {
    const LayerSpec& l = g.layers[li];
    const Tensor<T>& x = value(l.inputs.at(0));
    std::uint64_t param_scalars = 0;
    Tensor<T> y = std::visit(
        overloaded{[&](const layer::Conv& c) {
                     const Param<T>& p = w.at(l.id);
                     param_scalars = p.weight.size() + p.bias.size();
                     if (p.weight.shape() != Shape{c.cout, c.cin, c.k, c.k}) {
                       throw ShapeError("weights for " + l.id + " have shape " + p.weight.shape().str());
                     }
                     return conv2d(x, p.weight, std::span<const T>(p.bias), c.stride, c.pad, counter);
                   },
                   [&](const layer::LeakyRelu& a) { return leaky_relu(x, static_cast<T>(a.slope), counter); },
                   [&](const layer::PixelShuffle& p) { return pixel_shuffle(x, p.r); },
                   [&](const layer::Concat&) {
                     std::vector<const Tensor<T>*> parts;
                     for (const auto& in : l.inputs) parts.push_back(&value(in));
                     return concat_channels<T>(std::span<const Tensor<T>* const>(parts));
                   },
                   [&](const layer::Add&) {
                     Tensor<T> acc = add(x, value(l.inputs.at(1)), counter);
                     for (std::size_t k = 2; k < l.inputs.size(); ++k) acc = add(acc, value(l.inputs[k]), counter);
                     return acc;
                   },
                   [&](const layer::Cca&) {
                     const Param<T>& down = w.at(l.id + ".down");
                     const Param<T>& up = w.at(l.id + ".up");
                     param_scalars = down.weight.size() + down.bias.size() + up.weight.size() + up.bias.size();
                     return detail::cca_forward(x, down, up, r.trace.cca[li], counter);
                   }},
        l.kind);
    if (counter) {
      std::uint64_t scalars = y.size() + param_scalars;
      for (const auto& in : l.inputs) scalars += value(in).size();
      counter->bytes += scalars * kBytesPerScalar;
    }
    r.trace.outputs[li] = std::move(y);
    if (capture && l.tap) r.taps[*l.tap] = r.trace.outputs[li];
  }
  r.output = value(g.output_id);
  return r;
}

// Reverse pass. `dout` is the gradient w.r.t. the graph output (may be empty
// when only taps receive gradient); `tap_grads` adds gradients at tapped
// layers. Parameter gradients cover every slot of the graph.
template <class T>
Gradients<T> backward(const NetworkGraph& g, const WeightStore<T>& w, const Trace<T>& trace, const Tensor<T>& dout,
                      const TapSet<T>* tap_grads = nullptr, bool want_input_grad = true) {
  const auto idx = detail::index_layers(g);
  std::vector<Tensor<T>> grads(g.layers.size());
  Gradients<T> out;
  out.params = w.zeros_like();
  const int out_idx = idx.at(g.output_id);
  if (!dout.empty()) {
    if (!(dout.shape() == trace.outputs[static_cast<std::size_t>(out_idx)].shape())) {
      throw ShapeError("upstream gradient shape " + dout.shape().str() + " does not match output");
    }
    grads[static_cast<std::size_t>(out_idx)] = dout;
  }
  if (tap_grads) {
    for (const auto& [label, tg] : *tap_grads) {
      bool found = false;
      for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (g.layers[i].tap == label) {
          Tensor<T> copy = tg;
          detail::accumulate(grads[i], std::move(copy));
          found = true;
        }
      }
      if (!found) throw TapError("gradient supplied for unknown tap '" + label + "'");
    }
  }
  auto input_value = [&](const std::string& id) -> const Tensor<T>& {
    const int i = idx.at(id);
    return i < 0 ? trace.input : trace.outputs[static_cast<std::size_t>(i)];
  };
  auto send = [&](const std::string& id, Tensor<T>&& gin) {
    const int i = idx.at(id);
    if (i < 0) {
      if (want_input_grad) detail::accumulate(out.input, std::move(gin));
    } else {
      detail::accumulate(grads[static_cast<std::size_t>(i)], std::move(gin));
    }
  };
  for (int li = static_cast<int>(g.layers.size()) - 1; li >= 0; --li) {
    Tensor<T>& dy = grads[static_cast<std::size_t>(li)];
    if (dy.empty()) continue;
    const LayerSpec& l = g.layers[static_cast<std::size_t>(li)];
    const Tensor<T>& x = input_value(l.inputs.at(0));
    const bool need_dx = want_input_grad || l.inputs.at(0) != kInputId;
    std::visit(overloaded{[&](const layer::Conv& c) {
                            Param<T>& gp = out.params.at(l.id);
                            Tensor<T> dx;
                            conv2d_backward(x, w.at(l.id).weight, c.stride, c.pad, dy, need_dx ? &dx : nullptr,
                                            &gp.weight, std::span<T>(gp.bias));
                            if (need_dx) send(l.inputs[0], std::move(dx));
                          },
                          [&](const layer::LeakyRelu& a) {
                            send(l.inputs[0], leaky_relu_backward(x, static_cast<T>(a.slope), dy));
                          },
                          [&](const layer::PixelShuffle& p) { send(l.inputs[0], pixel_unshuffle(dy, p.r)); },
                          [&](const layer::Concat&) {
                            std::vector<int> widths;
                            for (const auto& in : l.inputs) widths.push_back(input_value(in).shape().c);
                            auto parts = split_channels(dy, std::span<const int>(widths));
                            for (std::size_t k = 0; k < parts.size(); ++k) send(l.inputs[k], std::move(parts[k]));
                          },
                          [&](const layer::Add&) {
                            for (const auto& in : l.inputs) {
                              Tensor<T> copy = dy;
                              send(in, std::move(copy));
                            }
                          },
                          [&](const layer::Cca&) {
                            Tensor<T> dx = detail::cca_backward(
                                x, w.at(l.id + ".down"), w.at(l.id + ".up"), trace.cca[static_cast<std::size_t>(li)],
                                dy, out.params.at(l.id + ".down"), out.params.at(l.id + ".up"));
                            send(l.inputs[0], std::move(dx));
                          }},
               l.kind);
    dy = Tensor<T>();
  }
  if (want_input_grad && out.input.empty()) out.input = Tensor<T>(trace.input.shape());
  return out;
}

// Convenience form that re-runs the forward pass.
template <class T>
Gradients<T> backward(const NetworkGraph& g, const WeightStore<T>& w, const Tensor<T>& input, const Tensor<T>& dout) {
  auto fwd = forward(g, w, input, false);
  return backward(g, w, fwd.trace, dout);
}

}  // namespace mfa

#endif  // MFA_ENGINE_EXECUTOR_HPP_
