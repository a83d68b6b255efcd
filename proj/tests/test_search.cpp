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

#include "mfa/search.hpp"
#include "mfa/weights.hpp"

namespace {

using mfa::Genotype;

double gene_sum(const Genotype& g) {
  double s = 0;
  for (int x : g.genes()) s += x;
  return s;
}

// A rugged but deterministic objective with a unique optimum.
double rugged(const Genotype& g) {
  const auto h = mfa::fnv1a(g.str());
  return gene_sum(g) + static_cast<double>(h % 1000) * 1e-3;
}

const mfa::GeneSpace kSpace;

TEST(Search, ConfigViolationsAreListed) {
  mfa::SearchConfig c;
  EXPECT_TRUE(c.violations().empty());
  c.population = 1;
  c.elite_k = 4;
  c.mutation_rate = 1.0;
  EXPECT_EQ(c.violations().size(), 3u);
  mfa::MemoFitness f(gene_sum);
  mfa::LatencyCache lat(kSpace, gene_sum);
  EXPECT_THROW(mfa::evolutionary_search(c, kSpace, f, lat), mfa::ConfigError);
}

TEST(Search, BudgetBelowMinimumIsInfeasible) {
  mfa::MemoFitness f(gene_sum);
  mfa::LatencyCache lat(kSpace, gene_sum);
  mfa::SearchConfig c;
  c.latency_budget_us = gene_sum(kSpace.min_genotype()) - 1.0;
  EXPECT_THROW(mfa::evolutionary_search(c, kSpace, f, lat), mfa::NoFeasibleCandidate);
  EXPECT_THROW(mfa::exhaustive_search(kSpace, f, lat, c.latency_budget_us), mfa::NoFeasibleCandidate);
}

TEST(Search, MonotoneFitnessFindsMaxCorner) {
  mfa::MemoFitness f(gene_sum);
  mfa::LatencyCache lat(kSpace, gene_sum);
  const auto r = mfa::evolutionary_search(mfa::SearchConfig{}, kSpace, f, lat);
  EXPECT_EQ(r.best.genotype, kSpace.max_genotype());
  mfa::MemoFitness f2(gene_sum);
  const auto e = mfa::exhaustive_search(kSpace, f2, lat, std::numeric_limits<double>::infinity());
  EXPECT_EQ(e.best.genotype, kSpace.max_genotype());
}

TEST(Search, ExhaustiveVisitsWholeSpace) {
  std::size_t calls = 0;
  mfa::MemoFitness f([&](const Genotype& g) {
    ++calls;
    return rugged(g);
  });
  mfa::LatencyCache lat(kSpace, gene_sum);
  const auto e = mfa::exhaustive_search(kSpace, f, lat, std::numeric_limits<double>::infinity());
  EXPECT_EQ(e.visited, 6561u);
  EXPECT_EQ(calls, 6561u);
  EXPECT_EQ(f.evaluations(), 6561u);
}

TEST(Search, ExhaustiveIsOptimalAndFeasible) {
  mfa::LatencyCache lat(kSpace, [](const Genotype& g) { return static_cast<double>(mfa::fnv1a("lat" + g.str()) % 997); });
  const double budget = 300.0;
  mfa::MemoFitness f(rugged);
  const auto e = mfa::exhaustive_search(kSpace, f, lat, budget);
  EXPECT_LE(e.best.latency_us, budget);
  // Independent second enumeration.
  for (const auto& g : kSpace.enumerate()) {
    if (lat(g) > budget) continue;
    EXPECT_GE(e.best.fitness, rugged(g));
  }
}

TEST(Search, TieBreakIsLexicographicallySmallest) {
  mfa::MemoFitness f([](const Genotype&) { return 1.0; });
  mfa::LatencyCache lat(kSpace, gene_sum);
  const auto e = mfa::exhaustive_search(kSpace, f, lat, std::numeric_limits<double>::infinity());
  EXPECT_EQ(e.best.genotype, kSpace.min_genotype());
}

TEST(Search, EvolutionIsDeterministicFeasibleAndElitist) {
  auto latf = [](const Genotype& g) { return static_cast<double>(mfa::fnv1a("lat" + g.str()) % 997); };
  mfa::SearchConfig c;
  c.latency_budget_us = 300.0;
  c.seed = 17;
  auto run = [&] {
    mfa::MemoFitness f(rugged);
    mfa::LatencyCache lat(kSpace, latf);
    return mfa::evolutionary_search(c, kSpace, f, lat);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.best.genotype, b.best.genotype);
  ASSERT_EQ(a.history.size(), static_cast<std::size_t>(c.generations + 1));
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].best, b.history[i].best);
    EXPECT_EQ(a.history[i].mean, b.history[i].mean);
    if (i) EXPECT_GE(a.history[i].best, a.history[i - 1].best);
  }
  EXPECT_TRUE(a.best.feasible);
  EXPECT_LE(a.best.latency_us, c.latency_budget_us);
  EXPECT_EQ(a.best.fitness, a.history.back().best);
}

TEST(Search, ThreadedEvaluationMatchesSerial) {
  mfa::SearchConfig c;
  c.latency_budget_us = 250.0;
  c.seed = 3;
  auto run = [&](int threads) {
    c.threads = threads;
    mfa::MemoFitness f(rugged);
    mfa::LatencyCache lat(kSpace, gene_sum);
    return mfa::evolutionary_search(c, kSpace, f, lat);
  };
  const auto a = run(1), b = run(4);
  EXPECT_EQ(a.best.genotype, b.best.genotype);
  EXPECT_EQ(a.history.back().mean, b.history.back().mean);
}

TEST(Search, FeasibilityMatchesBudgetEverywhere) {
  mfa::SearchConfig c;
  c.latency_budget_us = 230.0;  // tight: only narrow genotypes fit
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    c.seed = seed;
    mfa::MemoFitness f(gene_sum);
    mfa::LatencyCache lat(kSpace, gene_sum);
    const auto r = mfa::evolutionary_search(c, kSpace, f, lat);
    EXPECT_LE(r.best.latency_us, c.latency_budget_us);
    for (const auto& h : r.history) EXPECT_LE(gene_sum(h.best_genotype), c.latency_budget_us);
  }
}

class SubnetFitnessTest : public ::testing::Test {
 protected:
  mfa::GeneSpace space{{12, 8, 6}};
  mfa::MfanetOptions opt;
  Genotype sup = Genotype::uniform(12);
  mfa::WeightStore<float> store = mfa::init_weights<float>(mfa::build_mfanet(sup, opt), 4);
  std::vector<mfa::ImagePair> val = mfa::synth_dataset(3, 4, 32, 4);
  void SetUp() override { store.genotype_tag = sup; }
};

TEST_F(SubnetFitnessTest, MaxGenotypeEqualsSuperGenerator) {
  mfa::SubnetFitness fit(store, sup, val, opt, 4);
  const mfa::EvalSet direct(val);
  EXPECT_EQ(fit(sup), direct.mean_psnr(mfa::build_mfanet(sup, opt), store, 4));
  EXPECT_EQ(fit(Genotype::uniform(8)), fit(Genotype::uniform(8)));
}

TEST_F(SubnetFitnessTest, MemoizationSkipsForwardPasses) {
  mfa::SubnetFitness inner(store, sup, val, opt, 4);
  mfa::MemoFitness fit([&](const Genotype& g) { return inner(g); });
  const auto g = Genotype::parse("12,8,6,12,8,6,12,8");
  const double a = fit(g);
  const auto n = inner.forward_passes();
  EXPECT_GT(n, 0u);
  EXPECT_EQ(fit(g), a);
  EXPECT_EQ(inner.forward_passes(), n);
  EXPECT_EQ(fit.evaluations(), 1u);
}

TEST_F(SubnetFitnessTest, RejectsMismatchedTagAndEmptySet) {
  EXPECT_THROW(mfa::SubnetFitness(store, Genotype::uniform(8), val, opt, 4), mfa::SliceError);
  EXPECT_THROW(mfa::SubnetFitness(store, sup, {}, opt, 4), mfa::ConfigError);
}

}  // namespace
