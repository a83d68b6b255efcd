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

#ifndef MFA_GRAPH_HPP_
#define MFA_GRAPH_HPP_

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mfa/error.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

// Id under which layers refer to the network input.
inline const std::string kInputId = "input";

namespace layer {
struct Conv {
  int cin = 0;
  int cout = 0;
  int k = 3;
  int stride = 1;
  int pad = 1;
  bool operator==(const Conv&) const = default;
};
struct LeakyRelu {
  float slope = 0.2f;
  bool operator==(const LeakyRelu&) const = default;
};
struct PixelShuffle {
  int r = 2;
  bool operator==(const PixelShuffle&) const = default;
};
struct Concat {
  bool operator==(const Concat&) const = default;
};
struct Add {
  bool operator==(const Add&) const = default;
};
// Contrast-aware channel attention: (mean + std) per channel -> 1x1 conv to
// `hidden` -> ReLU -> 1x1 conv back to `channels` -> sigmoid gate.
struct Cca {
  int channels = 0;
  int hidden = 0;
  bool operator==(const Cca&) const = default;
};
}  // namespace layer

using LayerKind = std::variant<layer::Conv, layer::LeakyRelu, layer::PixelShuffle, layer::Concat, layer::Add, layer::Cca>;

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

inline std::string kind_name(const LayerKind& k) {
  return std::visit(overloaded{[](const layer::Conv&) { return "conv"; },
                               [](const layer::LeakyRelu&) { return "lrelu"; },
                               [](const layer::PixelShuffle&) { return "pixel_shuffle"; },
                               [](const layer::Concat&) { return "concat"; },
                               [](const layer::Add&) { return "add"; },
                               [](const layer::Cca&) { return "cca"; }},
                    k);
}

inline int cca_hidden(int channels) { return std::max(channels / 4, 4); }

struct LayerSpec {
  std::string id;
  LayerKind kind;
  std::vector<std::string> inputs;
  std::optional<std::string> tap;
  // Multiplier on the fan-in initialization scale (0.1 inside residual blocks).
  float init_gain = 1.0f;

  bool operator==(const LayerSpec&) const = default;
};

enum class GraphRole { Generic, Generator, Discriminator, Extractor };

inline std::vector<std::string> expected_taps(GraphRole role) {
  switch (role) {
    case GraphRole::Generator:
      return {"g1", "g2", "g3"};
    case GraphRole::Discriminator:
      return {"d2", "d4", "d6"};
    default:
      return {};
  }
}

struct NetworkGraph {
  std::vector<LayerSpec> layers;
  int input_channels = 3;
  std::string output_id;
  GraphRole role = GraphRole::Generic;

  // Position of a layer id, or -1 (including for kInputId).
  int find(std::string_view id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].id == id) return static_cast<int>(i);
    return -1;
  }

  const LayerSpec& at(std::string_view id) const {
    const int i = find(id);
    if (i < 0) throw GraphError("no layer '" + std::string(id) + "'");
    return layers[static_cast<std::size_t>(i)];
  }

  std::vector<std::string> taps() const {
    std::vector<std::string> t;
    for (const auto& l : layers)
      if (l.tap) t.push_back(*l.tap);
    return t;
  }

  bool operator==(const NetworkGraph&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

enum class DiagnosticKind {
  DuplicateId,
  UnknownLayer,
  NotTopological,
  ChannelMismatch,
  BadArity,
  BadParameter,
  TapMismatch,
  MissingOutput,
};

struct Diagnostic {
  DiagnosticKind kind;
  std::string layer;
  std::string message;
};

inline const char* diagnostic_name(DiagnosticKind k) {
  switch (k) {
    case DiagnosticKind::DuplicateId: return "DuplicateId";
    case DiagnosticKind::UnknownLayer: return "UnknownLayer";
    case DiagnosticKind::NotTopological: return "NotTopological";
    case DiagnosticKind::ChannelMismatch: return "ChannelMismatch";
    case DiagnosticKind::BadArity: return "BadArity";
    case DiagnosticKind::BadParameter: return "BadParameter";
    case DiagnosticKind::TapMismatch: return "TapMismatch";
    case DiagnosticKind::MissingOutput: return "MissingOutput";
  }
  return "?";
}

// Checks id uniqueness, topological ordering, channel arithmetic on every edge
// and tap completeness for the graph's role. Never throws on a malformed graph.
inline std::vector<Diagnostic> validate(const NetworkGraph& g) {
  std::vector<Diagnostic> out;
  auto report = [&](DiagnosticKind k, const std::string& id, std::string msg) {
    out.push_back({k, id, std::move(msg)});
  };
  std::unordered_map<std::string, int> channels{{kInputId, g.input_channels}};
  std::set<std::string> all_ids;
  for (const auto& l : g.layers) all_ids.insert(l.id);
  if (g.input_channels < 1) report(DiagnosticKind::BadParameter, kInputId, "input_channels must be positive");

  for (const auto& l : g.layers) {
    if (l.id == kInputId || channels.count(l.id)) {
      report(DiagnosticKind::DuplicateId, l.id, "duplicate layer id '" + l.id + "'");
      continue;
    }
    std::vector<int> in_ch;
    bool inputs_ok = true;
    for (const auto& in : l.inputs) {
      auto it = channels.find(in);
      if (it == channels.end()) {
        inputs_ok = false;
        if (all_ids.count(in)) {
          report(DiagnosticKind::NotTopological, l.id, "input '" + in + "' is defined after '" + l.id + "'");
        } else {
          report(DiagnosticKind::UnknownLayer, l.id, "input '" + in + "' does not exist");
        }
      } else {
        in_ch.push_back(it->second);
      }
    }
    int produced = -1;
    const bool single = l.inputs.size() == 1;
    std::visit(
        overloaded{
            [&](const layer::Conv& c) {
              if (!single) report(DiagnosticKind::BadArity, l.id, "conv takes exactly one input");
              if ((c.k != 1 && c.k != 3) || (c.stride != 1 && c.stride != 2) || c.pad < 0 || c.cin < 1 ||
                  c.cout < 1) {
                report(DiagnosticKind::BadParameter, l.id, "invalid conv parameters");
              }
              if (inputs_ok && single && in_ch[0] != c.cin) {
                report(DiagnosticKind::ChannelMismatch, l.id,
                       "conv expects " + std::to_string(c.cin) + " channels, input has " + std::to_string(in_ch[0]));
              }
              produced = c.cout;
            },
            [&](const layer::LeakyRelu& a) {
              if (!single) report(DiagnosticKind::BadArity, l.id, "lrelu takes exactly one input");
              if (!(a.slope > 0.0f && a.slope < 1.0f)) report(DiagnosticKind::BadParameter, l.id, "slope not in (0,1)");
              if (inputs_ok && single) produced = in_ch[0];
            },
            [&](const layer::PixelShuffle& p) {
              if (!single) report(DiagnosticKind::BadArity, l.id, "pixel_shuffle takes exactly one input");
              if (p.r < 1) {
                report(DiagnosticKind::BadParameter, l.id, "pixel_shuffle factor must be positive");
              } else if (inputs_ok && single) {
                if (in_ch[0] % (p.r * p.r) != 0) {
                  report(DiagnosticKind::ChannelMismatch, l.id, "channels not divisible by r^2");
                }
                produced = in_ch[0] / (p.r * p.r);
              }
            },
            [&](const layer::Concat&) {
              if (l.inputs.empty()) report(DiagnosticKind::BadArity, l.id, "concat needs inputs");
              if (inputs_ok) {
                produced = 0;
                for (int c : in_ch) produced += c;
              }
            },
            [&](const layer::Add&) {
              if (l.inputs.size() < 2) report(DiagnosticKind::BadArity, l.id, "add needs at least two inputs");
              if (inputs_ok && !in_ch.empty()) {
                for (int c : in_ch) {
                  if (c != in_ch[0]) {
                    report(DiagnosticKind::ChannelMismatch, l.id,
                           "add of " + std::to_string(in_ch[0]) + " and " + std::to_string(c) + " channels");
                    break;
                  }
                }
                produced = in_ch[0];
              }
            },
            [&](const layer::Cca& a) {
              if (!single) report(DiagnosticKind::BadArity, l.id, "cca takes exactly one input");
              if (a.channels < 1 || a.hidden < 1) report(DiagnosticKind::BadParameter, l.id, "invalid cca widths");
              if (inputs_ok && single && in_ch[0] != a.channels) {
                report(DiagnosticKind::ChannelMismatch, l.id,
                       "cca expects " + std::to_string(a.channels) + " channels, input has " + std::to_string(in_ch[0]));
              }
              produced = a.channels;
            }},
        l.kind);
    channels[l.id] = produced;
  }

  if (g.find(g.output_id) < 0) report(DiagnosticKind::MissingOutput, g.output_id, "output layer does not exist");

  const auto want = expected_taps(g.role);
  if (g.role == GraphRole::Generator || g.role == GraphRole::Discriminator) {
    auto have = g.taps();
    std::sort(have.begin(), have.end());
    if (have != want) report(DiagnosticKind::TapMismatch, "", "tap labels do not match the graph role");
  }
  return out;
}

inline bool is_valid(const NetworkGraph& g) { return validate(g).empty(); }

// Output shape of every layer (same order as g.layers) for a given input.
inline std::vector<Shape> infer_shapes(const NetworkGraph& g, Shape input) {
  if (input.c != g.input_channels) {
    throw ShapeError("graph expects " + std::to_string(g.input_channels) + " input channels, got " + input.str());
  }
  std::unordered_map<std::string, Shape> shapes{{kInputId, input}};
  std::vector<Shape> out;
  out.reserve(g.layers.size());
  auto get = [&](const std::string& id) {
    auto it = shapes.find(id);
    if (it == shapes.end()) throw GraphError("unknown or out-of-order input '" + id + "'");
    return it->second;
  };
  for (const auto& l : g.layers) {
    Shape s = get(l.inputs.at(0));
    std::visit(overloaded{[&](const layer::Conv& c) {
                            if (s.c != c.cin) throw ShapeError("layer " + l.id + ": channel mismatch");
                            s.c = c.cout;
                            s.h = (s.h + 2 * c.pad - c.k) / c.stride + 1;
                            s.w = (s.w + 2 * c.pad - c.k) / c.stride + 1;
                            if (s.h < 1 || s.w < 1) throw ShapeError("layer " + l.id + ": input too small");
                          },
                          [&](const layer::LeakyRelu&) {},
                          [&](const layer::PixelShuffle& p) {
                            if (s.c % (p.r * p.r)) throw ShapeError("layer " + l.id + ": bad pixel shuffle");
                            s.c /= p.r * p.r;
                            s.h *= p.r;
                            s.w *= p.r;
                          },
                          [&](const layer::Concat&) {
                            for (std::size_t i = 1; i < l.inputs.size(); ++i) {
                              const Shape t = get(l.inputs[i]);
                              if (t.n != s.n || t.h != s.h || t.w != s.w) throw ShapeError("layer " + l.id + ": concat");
                              s.c += t.c;
                            }
                          },
                          [&](const layer::Add&) {
                            for (std::size_t i = 1; i < l.inputs.size(); ++i)
                              if (!(get(l.inputs[i]) == s)) throw ShapeError("layer " + l.id + ": add shape mismatch");
                          },
                          [&](const layer::Cca& a) {
                            if (s.c != a.channels) throw ShapeError("layer " + l.id + ": cca channel mismatch");
                          }},
               l.kind);
    shapes[l.id] = s;
    out.push_back(s);
  }
  return out;
}

// Incremental construction with channel bookkeeping. Ids are prefixed with
// the current scope ("m1.b0." etc.).
class GraphBuilder {
 public:
  explicit GraphBuilder(int input_channels, GraphRole role = GraphRole::Generic) {
    graph_.input_channels = input_channels;
    graph_.role = role;
    channels_[kInputId] = input_channels;
  }

  std::string conv(const std::string& id, const std::string& input, int cout, int k, int stride, int pad,
                   float gain = 1.0f) {
    const int cin = channels(input);
    return push({id, layer::Conv{cin, cout, k, stride, pad}, {input}, std::nullopt, gain}, cout);
  }
  std::string lrelu(const std::string& id, const std::string& input, float slope = 0.2f) {
    return push({id, layer::LeakyRelu{slope}, {input}, std::nullopt, 1.0f}, channels(input));
  }
  std::string pixel_shuffle(const std::string& id, const std::string& input, int r) {
    return push({id, layer::PixelShuffle{r}, {input}, std::nullopt, 1.0f}, channels(input) / (r * r));
  }
  std::string concat(const std::string& id, const std::vector<std::string>& inputs) {
    int c = 0;
    for (const auto& in : inputs) c += channels(in);
    return push({id, layer::Concat{}, inputs, std::nullopt, 1.0f}, c);
  }
  std::string add(const std::string& id, const std::vector<std::string>& inputs) {
    return push({id, layer::Add{}, inputs, std::nullopt, 1.0f}, channels(inputs.at(0)));
  }
  std::string cca(const std::string& id, const std::string& input, float gain = 1.0f) {
    const int c = channels(input);
    return push({id, layer::Cca{c, cca_hidden(c)}, {input}, std::nullopt, gain}, c);
  }

  void tap(const std::string& id, const std::string& label) {
    for (auto& l : graph_.layers) {
      if (l.id == id) {
        l.tap = label;
        return;
      }
    }
    throw GraphError("cannot tap unknown layer '" + id + "'");
  }

  int channels(const std::string& id) const {
    auto it = channels_.find(id);
    if (it == channels_.end()) throw GraphError("unknown layer '" + id + "'");
    return it->second;
  }

  std::size_t size() const { return graph_.layers.size(); }

  NetworkGraph finish(const std::string& output_id) {
    graph_.output_id = output_id;
    return graph_;
  }

 private:
  std::string push(LayerSpec spec, int produced) {
    channels_[spec.id] = produced;
    graph_.layers.push_back(std::move(spec));
    return graph_.layers.back().id;
  }

  NetworkGraph graph_;
  std::unordered_map<std::string, int> channels_;
};

// ---------------------------------------------------------------------------
// Canonical JSON form (object keys sorted by nlohmann's default map).

inline const char* role_name(GraphRole r) {
  switch (r) {
    case GraphRole::Generator: return "generator";
    case GraphRole::Discriminator: return "discriminator";
    case GraphRole::Extractor: return "extractor";
    default: return "generic";
  }
}

inline nlohmann::json to_json(const LayerSpec& l) {
  nlohmann::json j;
  j["id"] = l.id;
  j["kind"] = kind_name(l.kind);
  j["inputs"] = l.inputs;
  if (l.tap) j["tap"] = *l.tap;
  if (l.init_gain != 1.0f) j["init_gain"] = l.init_gain;
  std::visit(overloaded{[&](const layer::Conv& c) {
                          j["cin"] = c.cin;
                          j["cout"] = c.cout;
                          j["k"] = c.k;
                          j["stride"] = c.stride;
                          j["pad"] = c.pad;
                        },
                        [&](const layer::LeakyRelu& a) { j["slope"] = a.slope; },
                        [&](const layer::PixelShuffle& p) { j["r"] = p.r; },
                        [&](const layer::Concat&) {}, [&](const layer::Add&) {},
                        [&](const layer::Cca& a) {
                          j["channels"] = a.channels;
                          j["hidden"] = a.hidden;
                        }},
             l.kind);
  return j;
}

inline nlohmann::json to_json(const NetworkGraph& g) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : g.layers) layers.push_back(to_json(l));
  return {{"input_channels", g.input_channels}, {"output", g.output_id}, {"role", role_name(g.role)},
          {"layers", layers}};
}

inline NetworkGraph graph_from_json(const nlohmann::json& j) {
  try {
    NetworkGraph g;
    g.input_channels = j.at("input_channels").get<int>();
    g.output_id = j.at("output").get<std::string>();
    const std::string role = j.value("role", "generic");
    g.role = role == "generator"       ? GraphRole::Generator
             : role == "discriminator" ? GraphRole::Discriminator
             : role == "extractor"     ? GraphRole::Extractor
                                       : GraphRole::Generic;
    for (const auto& jl : j.at("layers")) {
      LayerSpec l;
      l.id = jl.at("id").get<std::string>();
      l.inputs = jl.at("inputs").get<std::vector<std::string>>();
      if (jl.contains("tap")) l.tap = jl["tap"].get<std::string>();
      l.init_gain = jl.value("init_gain", 1.0f);
      const std::string kind = jl.at("kind").get<std::string>();
      if (kind == "conv") {
        l.kind = layer::Conv{jl.at("cin"), jl.at("cout"), jl.at("k"), jl.at("stride"), jl.at("pad")};
      } else if (kind == "lrelu") {
        l.kind = layer::LeakyRelu{jl.at("slope").get<float>()};
      } else if (kind == "pixel_shuffle") {
        l.kind = layer::PixelShuffle{jl.at("r").get<int>()};
      } else if (kind == "concat") {
        l.kind = layer::Concat{};
      } else if (kind == "add") {
        l.kind = layer::Add{};
      } else if (kind == "cca") {
        l.kind = layer::Cca{jl.at("channels"), jl.at("hidden")};
      } else {
        throw FormatError("unknown layer kind '" + kind + "'");
      }
      g.layers.push_back(std::move(l));
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed graph json: ") + e.what());
  }
}

}  // namespace mfa

#endif  // MFA_GRAPH_HPP_
