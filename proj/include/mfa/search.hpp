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

#ifndef MFA_SEARCH_HPP_
#define MFA_SEARCH_HPP_

// Latency-constrained evolutionary search over channel genotypes, plus the
// exhaustive oracle it is checked against.

#include <algorithm>
#include <atomic>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mfa/builders.hpp"
#include "mfa/dataio.hpp"
#include "mfa/engine/executor.hpp"
#include "mfa/error.hpp"
#include "mfa/evaluate.hpp"
#include "mfa/genotype.hpp"
#include "mfa/latency.hpp"
#include "mfa/rng.hpp"
#include "mfa/sharing.hpp"

namespace mfa {

struct SearchConfig {
  int population = 32;
  int generations = 40;
  double mutation_rate = 0.1;
  int elite_k = 8;
  int tournament = 2;
  double latency_budget_us = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  int threads = 1;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (population < 2) v.push_back("population must be >= 2");
    if (elite_k < 0 || elite_k >= population) v.push_back("elite_k must be in [0, population)");
    if (!(mutation_rate > 0.0 && mutation_rate < 1.0)) v.push_back("mutation_rate must be in (0, 1)");
    if (generations < 0) v.push_back("generations must be >= 0");
    if (tournament < 1) v.push_back("tournament must be >= 1");
    if (std::isnan(latency_budget_us)) v.push_back("latency budget is NaN");
    if (threads < 1) v.push_back("threads must be >= 1");
    return v;
  }
};

struct Candidate {
  Genotype genotype;
  double fitness = -std::numeric_limits<double>::infinity();
  double latency_us = 0.0;
  bool feasible = false;
};

struct GenerationStats {
  int generation = 0;
  double best = 0.0;
  double mean = 0.0;
  Genotype best_genotype;
};

struct SearchResult {
  Candidate best;
  std::vector<GenerationStats> history;
};

using GenotypeFn = std::function<double(const Genotype&)>;

// Higher fitness first; ties go to the lexicographically smaller genotype.
inline bool better(double fa, const Genotype& a, double fb, const Genotype& b) {
  if (fa != fb) return fa > fb;
  return a < b;
}

// Thread-safe memo around a pure fitness function.
class MemoFitness {
 public:
  explicit MemoFitness(GenotypeFn f) : f_(std::move(f)) {}

  double operator()(const Genotype& g) {
    {
      std::lock_guard lock(mu_);
      auto it = memo_.find(g);
      if (it != memo_.end()) return it->second;
    }
    const double v = f_(g);
    ++evaluations_;
    std::lock_guard lock(mu_);
    return memo_.emplace(g, v).first->second;
  }

  bool cached(const Genotype& g) const {
    std::lock_guard lock(mu_);
    return memo_.contains(g);
  }

  std::size_t evaluations() const { return evaluations_.load(); }

 private:
  GenotypeFn f_;
  mutable std::mutex mu_;
  std::map<Genotype, double> memo_;
  std::atomic<std::size_t> evaluations_{0};
};

// PSNR-Y of the SubGenerator for a genotype, using weights inherited from
// the SuperGenerator with no further training.
class SubnetFitness {
 public:
  SubnetFitness(const WeightStore<float>& super, Genotype super_g, std::vector<ImagePair> valset, MfanetOptions opt,
                int border)
      : super_(super), super_g_(super_g), opt_(opt), border_(border), val_(std::move(valset)) {
    if (super_.genotype_tag && *super_.genotype_tag != super_g_) {
      throw SliceError("super store is tagged " + super_.genotype_tag->str() + ", expected " + super_g_.str());
    }
    if (val_.empty()) throw ConfigError("validation set is empty");
  }

  double operator()(const Genotype& g) const {
    const NetworkGraph graph = build_mfanet(g, opt_);
    std::size_t n = 0;
    const double db = g == super_g_ ? val_.mean_psnr(graph, super_, border_, &n)
                                    : val_.mean_psnr(graph, slice_for_genotype(super_, super_g_, g, opt_), border_, &n);
    forwards_ += n;
    return db;
  }

  std::size_t forward_passes() const { return forwards_.load(); }

 private:
  const WeightStore<float>& super_;
  Genotype super_g_;
  MfanetOptions opt_;
  int border_;
  EvalSet val_;
  mutable std::atomic<std::size_t> forwards_{0};
};

// Latency of the genotype's MFANet under a LUT at a fixed LR size.
inline GenotypeFn lut_latency(const LatencyTable& lut, MfanetOptions opt, int h, int w) {
  return [&lut, opt, h, w](const Genotype& g) { return predict(build_mfanet(g, opt), lut, h, w); };
}

namespace detail {

// Evaluates every not-yet-cached genotype, optionally on several threads.
inline void evaluate_all(MemoFitness& fit, const std::vector<Genotype>& gs, int threads) {
  std::vector<Genotype> todo;
  for (const auto& g : gs)
    if (!fit.cached(g) && std::find(todo.begin(), todo.end(), g) == todo.end()) todo.push_back(g);
  if (threads <= 1 || todo.size() < 2) {
    for (const auto& g : todo) fit(g);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < todo.size(); i = next++) fit(todo[i]);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// The latency of every genotype in the space, memoized.
class LatencyCache {
 public:
  LatencyCache(const GeneSpace& space, GenotypeFn latency) : space_(space), latency_(std::move(latency)) {}

  double operator()(const Genotype& g) {
    auto it = memo_.find(g);
    if (it != memo_.end()) return it->second;
    return memo_.emplace(g, latency_(g)).first->second;
  }

  // All feasible genotypes in enumeration order.
  std::vector<Genotype> feasible(double budget) {
    std::vector<Genotype> out;
    for (std::size_t i = 0; i < space_.size(); ++i) {
      const Genotype g = space_.at(i);
      if ((*this)(g) <= budget) out.push_back(g);
    }
    return out;
  }

 private:
  GeneSpace space_;
  GenotypeFn latency_;
  std::map<Genotype, double> memo_;
};

inline SearchResult evolutionary_search(const SearchConfig& cfg, const GeneSpace& space, MemoFitness& fitness,
                                        LatencyCache& latency) {
  if (auto v = cfg.violations(); !v.empty()) throw ConfigError("invalid search config: " + v.front());
  const double budget = cfg.latency_budget_us;
  auto feasible = [&](const Genotype& g) { return latency(g) <= budget; };
  const std::vector<Genotype> pool = latency.feasible(budget);
  if (pool.empty()) {
    throw NoFeasibleCandidate("no genotype meets the latency budget of " + std::to_string(budget) + " us");
  }

  Rng rng(cfg.seed);
  auto random_genotype = [&] {
    std::array<int, kGeneCount> genes{};
    for (int& x : genes) x = space.choices[rng.below(3)];
    return Genotype(genes);
  };
  // Uniform over the feasible set: rejection first, then a direct draw.
  auto sample_feasible = [&] {
    for (int t = 0; t < 100; ++t) {
      Genotype g = random_genotype();
      if (feasible(g)) return g;
    }
    return pool[rng.below(pool.size())];
  };

  std::vector<Genotype> pop;
  for (int i = 0; i < cfg.population; ++i) pop.push_back(sample_feasible());

  SearchResult res;
  auto rank = [&](std::vector<Genotype>& p) {
    detail::evaluate_all(fitness, p, cfg.threads);
    std::stable_sort(p.begin(), p.end(),
                     [&](const Genotype& a, const Genotype& b) { return better(fitness(a), a, fitness(b), b); });
  };
  auto record = [&](int gen, const std::vector<Genotype>& p) {
    double mean = 0.0;
    for (const auto& g : p) mean += fitness(g);
    mean /= static_cast<double>(p.size());
    res.history.push_back({gen, fitness(p.front()), mean, p.front()});
    const double f = fitness(p.front());
    if (!res.best.feasible || better(f, p.front(), res.best.fitness, res.best.genotype)) {
      res.best = {p.front(), f, latency(p.front()), true};
    }
  };
  auto tournament = [&](const std::vector<Genotype>& p) {
    const Genotype* best = &p[rng.below(p.size())];
    for (int t = 1; t < cfg.tournament; ++t) {
      const Genotype* c = &p[rng.below(p.size())];
      if (better(fitness(*c), *c, fitness(*best), *best)) best = c;
    }
    return *best;
  };

  rank(pop);
  record(0, pop);
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    std::vector<Genotype> next(pop.begin(), pop.begin() + cfg.elite_k);
    while (static_cast<int>(next.size()) < cfg.population) {
      const Genotype p1 = tournament(pop);
      const Genotype p2 = tournament(pop);
      Genotype child;
      bool ok = false;
      for (int t = 0; t < 100 && !ok; ++t) {
        std::array<int, kGeneCount> genes{};
        for (int i = 0; i < kGeneCount; ++i) {
          genes[i] = rng.coin() ? p1[i] : p2[i];
          if (rng.uniform() < cfg.mutation_rate) genes[i] = space.choices[rng.below(3)];
        }
        child = Genotype(genes);
        ok = feasible(child);
      }
      // Clamp downward, widest gene first, until the child fits.
      for (int guard = 0; !ok && guard < kGeneCount * 3; ++guard) {
        std::array<int, kGeneCount> genes = child.genes();
        auto widest = std::max_element(genes.begin(), genes.end());
        const int lowered = space.step_down(*widest);
        if (lowered == *widest) break;
        *widest = lowered;
        child = Genotype(genes);
        ok = feasible(child);
      }
      next.push_back(ok ? child : p1);
    }
    pop = std::move(next);
    rank(pop);
    record(gen, pop);
  }
  return res;
}

struct ExhaustiveResult {
  Candidate best;
  std::size_t visited = 0;
  std::size_t feasible = 0;
};

inline ExhaustiveResult exhaustive_search(const GeneSpace& space, MemoFitness& fitness, LatencyCache& latency,
                                          double budget) {
  ExhaustiveResult r;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const Genotype g = space.at(i);
    ++r.visited;
    const double lat = latency(g);
    if (!(lat <= budget)) continue;
    ++r.feasible;
    const double f = fitness(g);
    if (!r.best.feasible || better(f, g, r.best.fitness, r.best.genotype)) r.best = {g, f, lat, true};
  }
  if (!r.best.feasible) {
    throw NoFeasibleCandidate("no genotype meets the latency budget of " + std::to_string(budget) + " us");
  }
  return r;
}

inline nlohmann::json to_json(const Candidate& c) {
  return {{"genotype", c.genotype.genes()}, {"fitness_db", c.fitness}, {"latency_us", c.latency_us},
          {"feasible", c.feasible}};
}

inline nlohmann::json to_json(const GenerationStats& s) {
  return {{"generation", s.generation}, {"best_db", s.best}, {"mean_db", s.mean},
          {"best_genotype", s.best_genotype.genes()}};
}

}  // namespace mfa

#endif  // MFA_SEARCH_HPP_
