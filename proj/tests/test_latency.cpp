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

#include <filesystem>
#include <set>
#include <unistd.h>

#include "mfa/builders.hpp"
#include "mfa/costmodel.hpp"
#include "mfa/latency.hpp"

namespace {

using mfa::Genotype;

mfa::NetworkGraph two_layers() {
  mfa::GraphBuilder b(3);
  auto c = b.conv("c", mfa::kInputId, 8, 3, 1, 1);
  auto a = b.lrelu("a", c);
  return b.finish(a);
}

mfa::LatencyTable uniform_lut(const mfa::NetworkGraph& g, int h, int w, double us) {
  mfa::LatencyTable t;
  for (const auto& kl : mfa::layer_keys(g, h, w)) t.entries[kl.key] = us;
  return t;
}

TEST(Latency, OpKeyFormat) {
  const auto keys = mfa::layer_keys(two_layers(), 10, 12);
  ASSERT_EQ(keys.size(), 2u);
  EXPECT_EQ(keys[0].key, "conv|3|8|3|1|1|10|12");
  EXPECT_EQ(keys[1].key, "lrelu|8|10|12");
}

TEST(Latency, OpKeysDistinguishLayerKinds) {
  const auto g = mfa::build_mfanet(Genotype::uniform(48));
  std::set<std::string> keys;
  for (const auto& kl : mfa::layer_keys(g, 8, 8)) {
    keys.insert(kl.key);
    EXPECT_EQ(kl.key.substr(0, kl.key.find('|')).empty(), false);
  }
  // Same kind and shapes collapse to one key; different shapes never do.
  EXPECT_LT(keys.size(), g.layers.size());
  EXPECT_NE(mfa::layer_keys(g, 8, 8)[0].key, mfa::layer_keys(g, 8, 9)[0].key);
}

TEST(Latency, EmptyGraphPredictsZero) {
  mfa::NetworkGraph g;
  g.input_channels = 3;
  EXPECT_EQ(mfa::predict(g, mfa::LatencyTable{}, 8, 8), 0.0);
}

TEST(Latency, TwoLayerAdditivity) {
  const auto g = two_layers();
  mfa::LatencyTable t;
  t.entries["conv|3|8|3|1|1|8|8"] = 10.0;
  t.entries["lrelu|8|8|8"] = 5.5;
  EXPECT_EQ(mfa::predict(g, t, 8, 8), 15.5);
}

TEST(Latency, UnitLutCountsLayers) {
  const auto g = mfa::build_mfanet(Genotype::parse("48,32,24,48,32,24,48,32"));
  EXPECT_EQ(mfa::predict(g, uniform_lut(g, 16, 16, 1.0), 16, 16), static_cast<double>(g.layers.size()));
}

TEST(Latency, MissingKeyNamesKey) {
  const auto g = two_layers();
  mfa::LatencyTable t;
  t.entries["conv|3|8|3|1|1|8|8"] = 10.0;
  try {
    mfa::predict(g, t, 8, 8);
    FAIL() << "expected MissingEntry";
  } catch (const mfa::MissingEntry& e) {
    EXPECT_NE(std::string(e.what()).find("lrelu|8|8|8"), std::string::npos);
  }
}

TEST(Latency, ConcatenatedGraphIsSumOfParts) {
  mfa::GraphBuilder ab(3), a(3), b(8);
  auto x = ab.conv("c1", mfa::kInputId, 8, 3, 1, 1);
  x = ab.lrelu("a1", x);
  x = ab.conv("c2", x, 12, 3, 2, 1);
  const auto gab = ab.finish(ab.pixel_shuffle("ps", x, 2));
  const auto ga = a.finish(a.lrelu("a1", a.conv("c1", mfa::kInputId, 8, 3, 1, 1)));
  const auto gb = b.finish(b.pixel_shuffle("ps", b.conv("c2", mfa::kInputId, 12, 3, 2, 1), 2));
  mfa::LatencyTable t;
  mfa::Rng r(3);
  for (const auto& kl : mfa::layer_keys(gab, 16, 16)) t.entries[kl.key] = r.uniform(0.0, 100.0);
  EXPECT_DOUBLE_EQ(mfa::predict(gab, t, 16, 16), mfa::predict(ga, t, 16, 16) + mfa::predict(gb, t, 16, 16));
  EXPECT_EQ(mfa::predict(gab, t, 16, 16), mfa::predict(gab, t, 16, 16));
}

TEST(Latency, FlopsProportionalMatchesCostModel) {
  mfa::GeneSpace space{{12, 8, 6}};
  const mfa::MfanetOptions opt;
  const double alpha = 1e-4;
  const auto lut = mfa::synth_lut(space, opt, 8, 8, mfa::LutModel::FlopsProportional, 0, alpha);
  mfa::Rng r(9);
  for (int i = 0; i < 40; ++i) {
    const auto g = mfa::build_mfanet(space.at(r.below(space.size())), opt);
    const double p = mfa::predict(g, lut, 8, 8);
    const double f = static_cast<double>(mfa::count_flops(g, 8, 8));
    EXPECT_NEAR(p / (alpha * f), 1.0, 1e-12);
  }
}

TEST(Latency, SynthLutCoversSpaceAndIsGeneMonotone) {
  mfa::GeneSpace space{{12, 8, 6}};
  const auto flops = mfa::synth_lut(space, {}, 8, 8, mfa::LutModel::FlopsProportional);
  const auto rnd = mfa::synth_lut(space, {}, 8, 8, mfa::LutModel::RandomSeeded, 5);
  EXPECT_EQ(rnd, mfa::synth_lut(space, {}, 8, 8, mfa::LutModel::RandomSeeded, 5));
  EXPECT_NE(rnd, mfa::synth_lut(space, {}, 8, 8, mfa::LutModel::RandomSeeded, 6));
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto gt = space.at(i);
    const double p = mfa::predict(mfa::build_mfanet(gt), flops, 8, 8);
    EXPECT_NO_THROW(mfa::predict(mfa::build_mfanet(gt), rnd, 8, 8));
    if (i % 50) continue;
    for (int k = 0; k < mfa::kGeneCount; ++k) {
      if (gt[k] == 12) continue;
      auto genes = gt.genes();
      genes[k] = gt[k] == 6 ? 8 : 12;
      EXPECT_LT(p, mfa::predict(mfa::build_mfanet(Genotype(genes)), flops, 8, 8));
    }
  }
}

TEST(Latency, JsonRoundTripAndSortedKeys) {
  const auto lut = mfa::synth_lut(mfa::GeneSpace{{12, 8, 6}}, {}, 8, 8, mfa::LutModel::RandomSeeded, 2);
  const auto p = std::filesystem::temp_directory_path() / ("mfa_lut_" + std::to_string(::getpid()) + ".json");
  mfa::save_lut(lut, p);
  EXPECT_EQ(mfa::load_lut(p), lut);
  const auto j = mfa::to_json(lut);
  EXPECT_EQ(j["schema_version"], 1);
  for (std::size_t i = 1; i < j["entries"].size(); ++i)
    EXPECT_LT(j["entries"][i - 1]["key"].get<std::string>(), j["entries"][i]["key"].get<std::string>());
  std::filesystem::remove(p);
}

TEST(Latency, MalformedLutRejected) {
  nlohmann::json j = {{"schema_version", 1}, {"device", "x"}, {"entries", {{{"key", "a"}, {"us", -1.0}}}}};
  EXPECT_THROW(mfa::lut_from_json(j), mfa::FormatError);
  j["entries"] = {{{"key", "a"}, {"us", 1.0}}, {{"key", "a"}, {"us", 2.0}}};
  EXPECT_THROW(mfa::lut_from_json(j), mfa::FormatError);
  j = {{"schema_version", 2}, {"device", "x"}, {"entries", nlohmann::json::array()}};
  EXPECT_THROW(mfa::lut_from_json(j), mfa::FormatError);
  EXPECT_THROW(mfa::load_lut("/nonexistent/lut.json"), mfa::FormatError);
}

TEST(Latency, ProfileCoversAllKeys) {
  const auto g = mfa::build_mfanet(Genotype::uniform(48));
  const auto t = mfa::profile({{g, 32, 32}}, 3, 1, 1);
  for (const auto& kl : mfa::layer_keys(g, 32, 32)) {
    ASSERT_TRUE(t.entries.contains(kl.key)) << kl.key;
    EXPECT_GE(t.entries.at(kl.key), 0.0);
    EXPECT_TRUE(std::isfinite(t.entries.at(kl.key)));
  }
  EXPECT_NO_THROW(mfa::predict(g, t, 32, 32));
}

TEST(Latency, ProfileNeedsThreeReps) {
  EXPECT_THROW(mfa::profile({{two_layers(), 8, 8}}, 2, 0, 1), mfa::ConfigError);
}

TEST(Latency, TinyConvMedianIsStable) {
  mfa::GraphBuilder b(1);
  const auto g = b.finish(b.conv("c", mfa::kInputId, 1, 1, 1, 0));
  const auto key = mfa::layer_keys(g, 4, 4)[0].key;
  const double a = mfa::profile({{g, 4, 4}}, 51, 10, 1).entries.at(key);
  const double c = mfa::profile({{g, 4, 4}}, 51, 10, 2).entries.at(key);
  EXPECT_LE(std::max(a, c), 3.0 * std::min(a, c) + 0.05);
}

}  // namespace
