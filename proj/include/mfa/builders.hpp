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

#ifndef MFA_BUILDERS_HPP_
#define MFA_BUILDERS_HPP_

#include <string>
#include <vector>

#include "mfa/genotype.hpp"
#include "mfa/graph.hpp"

namespace mfa {

inline constexpr float kLeakySlope = 0.2f;
inline constexpr float kResidualGain = 0.1f;

// Concatenative feature aggregation block: a chain of five 3x3 conv+LReLU
// stages whose outputs are concatenated, gated by CCA, projected back to
// `width` by a 1x1 conv and added to the first stage's output.
// Emits 14 layers; returns the id of the final Add.
inline std::string build_cfab(GraphBuilder& b, const std::string& prefix, const std::string& input, int cin,
                              int width, float gain = kResidualGain) {
  if (width < 1) throw GenotypeError("cfab width must be positive");
  if (b.channels(input) != cin) throw GraphError("cfab input '" + input + "' does not have " + std::to_string(cin) + " channels");
  std::vector<std::string> stages;
  std::string x = input;
  for (int i = 1; i <= 5; ++i) {
    const std::string n = std::to_string(i);
    x = b.conv(prefix + "conv" + n, x, width, 3, 1, 1, gain);
    x = b.lrelu(prefix + "act" + n, x, kLeakySlope);
    stages.push_back(x);
  }
  const std::string cat = b.concat(prefix + "cat", stages);
  const std::string att = b.cca(prefix + "cca", cat, gain);
  const std::string fuse = b.conv(prefix + "fuse", att, width, 1, 1, 0, gain);
  return b.add(prefix + "add", {fuse, stages.front()});
}

struct MfanetOptions {
  int scale = 4;
  int cfabs_per_mfam = 2;
};

// Generator backbone. Layer ids do not depend on the genotype, which is what
// lets weights be shared across SubGenerators by id.
inline NetworkGraph build_mfanet(const Genotype& g, const MfanetOptions& opt = {}) {
  if (opt.scale != 2 && opt.scale != 4) throw GenotypeError("mfanet scale must be 2 or 4");
  if (opt.cfabs_per_mfam < 1) throw GenotypeError("cfabs_per_mfam must be >= 1");
  GraphBuilder b(3, GraphRole::Generator);
  const std::string head = b.lrelu("head.act", b.conv("head.conv", kInputId, g.coarse(), 3, 1, 1), kLeakySlope);

  std::vector<std::string> mfam_out;
  std::string x = head;
  for (int m = 0; m < 3; ++m) {
    const std::string p = "m" + std::to_string(m + 1) + ".";
    const int internal = g.mfam_internal(m);
    std::vector<std::string> parts{x};
    std::string y = x;
    for (int j = 0; j < opt.cfabs_per_mfam; ++j) {
      y = build_cfab(b, p + "b" + std::to_string(j) + ".", y, b.channels(y), internal);
      parts.push_back(y);
    }
    const std::string cat = b.concat(p + "cat", parts);
    const std::string fuse = b.conv(p + "fuse", cat, g.mfam_output(m), 1, 1, 0, kResidualGain);
    // Input and output widths are independent genes, so the skip goes
    // through a 1x1 projection.
    const std::string proj = b.conv(p + "proj", x, g.mfam_output(m), 1, 1, 0, kResidualGain);
    x = b.add(p + "add", {fuse, proj});
    b.tap(x, "g" + std::to_string(m + 1));
    mfam_out.push_back(x);
  }

  const std::string gcat = b.concat("global.cat", mfam_out);
  const std::string gfuse = b.conv("global.fuse", gcat, g.coarse(), 1, 1, 0);
  const std::string gadd = b.add("global.add", {gfuse, head});
  const std::string smooth = b.lrelu("smooth.act", b.conv("smooth.conv", gadd, g.smoothing(), 3, 1, 1), kLeakySlope);
  const std::string recon = b.conv("recon.conv", smooth, 3 * opt.scale * opt.scale, 3, 1, 1);
  return b.finish(b.pixel_shuffle("upsample", recon, opt.scale));
}

// Seven-layer fully convolutional PatchGAN without normalization layers.
// Taps d2/d4/d6 sit on the outputs of convs 2, 4 and 6.
inline NetworkGraph build_patchgan(int base) {
  if (base < 1) throw GraphError("patchgan base width must be positive");
  GraphBuilder b(3, GraphRole::Discriminator);
  struct Spec {
    int cout;
    int stride;
  };
  const Spec specs[7] = {{base, 1},     {base, 2},     {2 * base, 1}, {2 * base, 2},
                         {4 * base, 1}, {4 * base, 2}, {1, 1}};
  std::string x = kInputId;
  for (int i = 0; i < 7; ++i) {
    const std::string n = std::to_string(i + 1);
    x = b.conv("d.conv" + n, x, specs[i].cout, 3, specs[i].stride, 1);
    if ((i + 1) % 2 == 0 && i < 6) b.tap(x, "d" + n);
    if (i < 6) x = b.lrelu("d.act" + n, x, kLeakySlope);
  }
  return b.finish(x);
}

// Topology of the fixed feature extractor used by the perceptual loss:
// 3->16 -> 32(s2) -> 32 -> 64(s2) -> 64, LReLU between convs; the final conv
// output (pre-activation) is the feature map.
inline NetworkGraph build_percep_graph() {
  GraphBuilder b(3, GraphRole::Extractor);
  const int widths[5] = {16, 32, 32, 64, 64};
  const int strides[5] = {1, 2, 1, 2, 1};
  std::string x = kInputId;
  for (int i = 0; i < 5; ++i) {
    const std::string n = std::to_string(i + 1);
    x = b.conv("p.conv" + n, x, widths[i], 3, strides[i], 1);
    if (i < 4) x = b.lrelu("p.act" + n, x, kLeakySlope);
  }
  return b.finish(x);
}

}  // namespace mfa

#endif  // MFA_BUILDERS_HPP_
