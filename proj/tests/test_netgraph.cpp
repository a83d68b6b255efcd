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


#include <gtest/gtest.h>

#include <set>

#include "mfa/builders.hpp"
#include "mfa/costmodel.hpp"
#include "mfa/engine/executor.hpp"
#include "mfa/genotype.hpp"
#include "mfa/graph.hpp"
#include "mfa/weights.hpp"

namespace {

using mfa::Genotype;
using mfa::GraphBuilder;
using mfa::NetworkGraph;
using mfa::Shape;

int count_kind(const NetworkGraph& g, const std::string& kind) {
  int n = 0;
  for (const auto& l : g.layers) n += mfa::kind_name(l.kind) == kind;
  return n;
}

bool has_diag(const NetworkGraph& g, mfa::DiagnosticKind k) {
  for (const auto& d : mfa::validate(g))
    if (d.kind == k) return true;
  return false;
}

TEST(Genotype, ParseAndErrors) {
  auto g = Genotype::parse("48, 32,24,48,32,24,48,32");
  EXPECT_EQ(g[0], 48);
  EXPECT_EQ(g[7], 32);
  EXPECT_EQ(Genotype::parse(g.str()), g);
  EXPECT_THROW(Genotype::parse("48,32"), mfa::GenotypeError);
  EXPECT_THROW(Genotype(std::vector<int>(9, 48)), mfa::GenotypeError);
  EXPECT_THROW(Genotype::uniform(0), mfa::GenotypeError);
  mfa::GeneSpace space;
  EXPECT_THROW(space.check(Genotype::uniform(40)), mfa::GenotypeError);
  EXPECT_NO_THROW(space.check(g));
}

TEST(GeneSpace, EnumeratesEveryGenotypeOnce) {
  mfa::GeneSpace space;
  const auto all = space.enumerate();
  ASSERT_EQ(all.size(), 6561u);
  std::set<Genotype> unique(all.begin(), all.end());
  EXPECT_EQ(unique.size(), 6561u);
  for (const auto& g : all) EXPECT_TRUE(space.contains(g));
  EXPECT_THROW(space.at(6561), mfa::GenotypeError);
  EXPECT_EQ(space.step_down(48), 32);
  EXPECT_EQ(space.step_down(24), 24);
}

TEST(Cfab, EmitsFourteenNodes) {
  GraphBuilder b(8);
  const auto out = mfa::build_cfab(b, "c.", mfa::kInputId, 8, 8);
  EXPECT_EQ(b.size(), 14u);
  EXPECT_EQ(b.channels(out), 8);
  auto g = b.finish(out);
  EXPECT_EQ(count_kind(g, "conv"), 6);
  EXPECT_EQ(count_kind(g, "lrelu"), 5);
  EXPECT_TRUE(mfa::is_valid(g));
}

TEST(Cfab, WidthChangeThroughFirstConv) {
  GraphBuilder b(48);
  const auto out = mfa::build_cfab(b, "c.", mfa::kInputId, 48, 32);
  auto g = b.finish(out);
  const auto& c1 = std::get<mfa::layer::Conv>(g.at("c.conv1").kind);
  EXPECT_EQ(c1.cin, 48);
  EXPECT_EQ(c1.cout, 32);
  EXPECT_EQ(g.at(out).inputs.at(1), "c.act1");
  EXPECT_TRUE(mfa::is_valid(g));
  auto shapes = mfa::infer_shapes(g, Shape{1, 48, 6, 6});
  EXPECT_EQ(shapes.back(), (Shape{1, 32, 6, 6}));
}

TEST(Mfanet, AllMaxOutputShape) {
  auto g = mfa::build_mfanet(Genotype::uniform(48));
  ASSERT_TRUE(mfa::is_valid(g));
  EXPECT_EQ(mfa::infer_shapes(g, Shape{1, 3, 32, 32}).back(), (Shape{1, 3, 128, 128}));
}

TEST(Mfanet, TapsCarryGeneWidths) {
  const auto geno = Genotype::parse("24,32,48,24,32,48,24,32");
  auto g = mfa::build_mfanet(geno);
  const auto shapes = mfa::infer_shapes(g, Shape{1, 3, 8, 8});
  std::map<std::string, int> tap_c;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    if (g.layers[i].tap) tap_c[*g.layers[i].tap] = shapes[i].c;
  ASSERT_EQ(tap_c.size(), 3u);
  EXPECT_EQ(tap_c["g1"], geno[2]);
  EXPECT_EQ(tap_c["g2"], geno[4]);
  EXPECT_EQ(tap_c["g3"], geno[6]);
}

TEST(Mfanet, SmallerGenotypeHasFewerParams) {
  EXPECT_LT(mfa::count_params(mfa::build_mfanet(Genotype::uniform(24))),
            mfa::count_params(mfa::build_mfanet(Genotype::uniform(48))));
}

TEST(Mfanet, EveryGenotypeValidAndUpscales) {
  mfa::GeneSpace space;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto geno = space.at(i);
    const auto g = mfa::build_mfanet(geno);
    ASSERT_TRUE(mfa::is_valid(g)) << geno.str();
    if (i % 97 == 0) {
      EXPECT_EQ(mfa::infer_shapes(g, Shape{2, 3, 8, 12}).back(), (Shape{2, 3, 32, 48})) << geno.str();
      auto g2 = mfa::build_mfanet(geno, {2, 1});
      EXPECT_EQ(mfa::infer_shapes(g2, Shape{1, 3, 9, 8}).back(), (Shape{1, 3, 18, 16}));
    }
  }
}

TEST(Mfanet, ConstructionIsPure) {
  const auto geno = Genotype::parse("32,24,48,48,24,32,24,48");
  EXPECT_EQ(mfa::build_mfanet(geno), mfa::build_mfanet(geno));
  // Ids do not depend on widths.
  auto a = mfa::build_mfanet(geno);
  auto b = mfa::build_mfanet(Genotype::uniform(24));
  ASSERT_EQ(a.layers.size(), b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) EXPECT_EQ(a.layers[i].id, b.layers[i].id);
}

TEST(Mfanet, RejectsBadOptions) {
  EXPECT_THROW(mfa::build_mfanet(Genotype{}, {3, 2}), mfa::GenotypeError);
  EXPECT_THROW(mfa::build_mfanet(Genotype{}, {4, 0}), mfa::GenotypeError);
}

TEST(PatchGan, LogitMapAndTaps) {
  auto g = mfa::build_patchgan(64);
  ASSERT_TRUE(mfa::is_valid(g));
  EXPECT_EQ(count_kind(g, "conv"), 7);
  EXPECT_EQ(count_kind(g, "lrelu"), 6);
  const auto shapes = mfa::infer_shapes(g, Shape{1, 3, 128, 128});
  EXPECT_EQ(shapes.back(), (Shape{1, 1, 16, 16}));
  std::map<std::string, int> tap_c;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    if (g.layers[i].tap) tap_c[*g.layers[i].tap] = shapes[i].c;
  EXPECT_EQ(tap_c, (std::map<std::string, int>{{"d2", 64}, {"d4", 128}, {"d6", 256}}));
}

TEST(PercepExtractor, ShapeAndDeterminism) {
  auto [g1, w1] = mfa::build_percep_extractor<double>(3);
  auto [g2, w2] = mfa::build_percep_extractor<double>(3);
  EXPECT_TRUE(mfa::bit_equal(w1, w2));
  EXPECT_EQ(mfa::infer_shapes(g1, Shape{1, 3, 64, 64}).back(), (Shape{1, 64, 16, 16}));
  mfa::Tensor<double> x(Shape{1, 3, 16, 16});
  mfa::Rng r(1);
  for (auto& v : x.data()) v = r.uniform();
  auto a = mfa::forward(g1, w1, x, false).output;
  auto b = mfa::forward(g1, w1, x, false).output;
  EXPECT_TRUE(mfa::bit_equal(a, b));
  auto [g3, w3] = mfa::build_percep_extractor<double>(4);
  EXPECT_FALSE(mfa::bit_equal(w1, w3));
}

TEST(Validate, ChannelMismatchOnAdd) {
  GraphBuilder b(3);
  auto a = b.conv("a", mfa::kInputId, 8, 3, 1, 1);
  auto c = b.conv("c", mfa::kInputId, 12, 3, 1, 1);
  auto g = b.finish(b.add("sum", {a, c}));
  EXPECT_TRUE(has_diag(g, mfa::DiagnosticKind::ChannelMismatch));
}

TEST(Validate, DanglingInput) {
  GraphBuilder b(3);
  auto g = b.finish(b.conv("a", mfa::kInputId, 8, 3, 1, 1));
  g.layers.push_back({"b", mfa::layer::LeakyRelu{}, {"ghost"}, std::nullopt, 1.0f});
  g.output_id = "b";
  EXPECT_TRUE(has_diag(g, mfa::DiagnosticKind::UnknownLayer));
}

TEST(Validate, OrderingDuplicatesTapsOutput) {
  auto g = mfa::build_mfanet(Genotype{});
  auto swapped = g;
  std::swap(swapped.layers[0], swapped.layers[1]);
  EXPECT_TRUE(has_diag(swapped, mfa::DiagnosticKind::NotTopological));

  auto dup = g;
  dup.layers[3].id = dup.layers[2].id;
  EXPECT_TRUE(has_diag(dup, mfa::DiagnosticKind::DuplicateId));

  auto untapped = g;
  for (auto& l : untapped.layers) l.tap.reset();
  EXPECT_TRUE(has_diag(untapped, mfa::DiagnosticKind::TapMismatch));

  auto no_out = g;
  no_out.output_id = "nowhere";
  EXPECT_TRUE(has_diag(no_out, mfa::DiagnosticKind::MissingOutput));

  auto bad_shuffle = g;
  std::get<mfa::layer::PixelShuffle>(bad_shuffle.layers.back().kind).r = 5;
  EXPECT_FALSE(mfa::validate(bad_shuffle).empty());
}

TEST(GraphJson, RoundTrip) {
  for (const auto& g : {mfa::build_mfanet(Genotype::parse("48,32,24,48,32,24,48,32")), mfa::build_patchgan(32),
                        mfa::build_percep_graph()}) {
    const auto j = mfa::to_json(g);
    EXPECT_EQ(mfa::graph_from_json(j), g);
    EXPECT_EQ(mfa::to_json(mfa::graph_from_json(j)).dump(), j.dump());
  }
  EXPECT_THROW(mfa::graph_from_json(nlohmann::json::parse(R"({"layers": 3})")), mfa::Error);
}

}  // namespace
