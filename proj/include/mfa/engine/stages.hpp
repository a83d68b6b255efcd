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

#ifndef MFA_ENGINE_STAGES_HPP_
#define MFA_ENGINE_STAGES_HPP_

// Training loops for the five pipeline stages: L1 pretraining, adversarial
// training of the large model, joint G/D distillation, single-path
// SuperGenerator training and SubGenerator fine-tuning.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfa/builders.hpp"
#include "mfa/dataio.hpp"
#include "mfa/engine/adam.hpp"
#include "mfa/engine/executor.hpp"
#include "mfa/engine/losses.hpp"
#include "mfa/error.hpp"
#include "mfa/evaluate.hpp"
#include "mfa/genotype.hpp"
#include "mfa/rng.hpp"
#include "mfa/sharing.hpp"
#include "mfa/weights.hpp"

namespace mfa {

enum class Stage { PretrainL1, TrainGanLarge, DistillGD, TrainSupernet, Finetune };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::PretrainL1: return "pretrain_l1";
    case Stage::TrainGanLarge: return "train_gan_large";
    case Stage::DistillGD: return "distill_gd";
    case Stage::TrainSupernet: return "train_supernet";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

// Constant learning rate halved at every milestone already passed.
struct Schedule {
  int iterations = 0;
  double lr = 1e-4;
  std::vector<int> milestones;

  double lr_at(int it) const {
    double r = lr;
    for (int m : milestones)
      if (it >= m) r *= 0.5;
    return r;
  }

  // Same schedule with iteration count and milestones divided by `factor`.
  Schedule scaled(double factor) const {
    Schedule s = *this;
    s.iterations = std::max(1, static_cast<int>(std::lround(iterations / factor)));
    for (int& m : s.milestones) m = static_cast<int>(std::lround(m / factor));
    return s;
  }
};

struct TrainConfig {
  Schedule schedule;
  int batch = 16;
  int hr_patch = 128;
  int scale = 4;
  std::uint64_t seed = 0;
  LossWeights lambda;
  AdamConfig adam;
  NormConvention norm = NormConvention::Rms;
  int log_every = 10;
  int eval_every = 0;  // 0: evaluate only after the last iteration

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (batch < 1) v.push_back("batch must be >= 1");
    if (schedule.iterations < 0) v.push_back("iterations must be >= 0");
    if (!(schedule.lr > 0.0)) v.push_back("lr must be positive");
    if (scale != 2 && scale != 4) v.push_back("scale must be 2 or 4");
    if (hr_patch < scale || hr_patch % scale != 0) v.push_back("hr_patch must be a positive multiple of scale");
    if (!lambda.all_finite() || lambda.recon < 0 || lambda.distill_g < 0 || lambda.distill_d < 0 ||
        lambda.percep < 0 || lambda.adv < 0) {
      v.push_back("loss weights must be finite and non-negative");
    }
    if (log_every < 1) v.push_back("log_every must be >= 1");
    return v;
  }
};

struct Model {
  NetworkGraph graph;
  WeightStore<float> weights;
};

struct TrainingBatch {
  Tensor<float> lr;
  Tensor<float> hr;
};

// Random aligned crops with augmentation. Draw b of iteration `it` comes from
// its own stream (seed, it, b), independent of anything else.
class PatchSampler {
 public:
  PatchSampler(const std::vector<ImagePair>& data, int hr_patch, int scale, std::uint64_t seed)
      : data_(data), hr_patch_(hr_patch), scale_(scale), root_(Rng(seed).split(0x7061746368ULL)) {
    if (data_.empty()) throw ConfigError("training set is empty");
    for (const auto& p : data_) {
      if (p.hr.h < hr_patch || p.hr.w < hr_patch) throw ConfigError("training image smaller than hr_patch");
      if (p.lr.h * scale != p.hr.h || p.lr.w * scale != p.hr.w) throw ShapeError("lr/hr pair inconsistent with scale");
    }
  }

  TrainingBatch sample(int it, int batch) const {
    std::vector<ImageRGB> lrs, hrs;
    const int lp = hr_patch_ / scale_;
    for (int b = 0; b < batch; ++b) {
      Rng rng = root_.split(static_cast<std::uint64_t>(it)).split(static_cast<std::uint64_t>(b));
      const ImagePair& p = data_[rng.below(data_.size())];
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.lr.h - lp + 1)));
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.lr.w - lp + 1)));
      const AugmentDraw d = AugmentDraw::sample(rng);
      lrs.push_back(apply_augment(crop(p.lr, y, x, lp, lp), d));
      hrs.push_back(apply_augment(crop(p.hr, y * scale_, x * scale_, hr_patch_, hr_patch_), d));
    }
    std::vector<const ImageRGB*> pl, ph;
    for (int b = 0; b < batch; ++b) {
      pl.push_back(&lrs[static_cast<std::size_t>(b)]);
      ph.push_back(&hrs[static_cast<std::size_t>(b)]);
    }
    return {stack_images<float>(pl), stack_images<float>(ph)};
  }

 private:
  const std::vector<ImagePair>& data_;
  int hr_patch_;
  int scale_;
  Rng root_;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;

struct StageIO {
  const std::vector<ImagePair>* train = nullptr;
  const EvalSet* val = nullptr;
  const FeatureExtractor<float>* phi = nullptr;
  MetricsSink sink;
};

struct StageResult {
  std::vector<LossParts> parts;
  std::vector<double> total;
  double psnr_val = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline const TapSet<float>* const kNoTaps = nullptr;

template <class T>
void add_scaled(Tensor<T>& acc, const Tensor<T>& g, double k) {
  if (acc.empty()) {
    acc = Tensor<T>(g.shape());
  }
  if (!(acc.shape() == g.shape())) throw ShapeError("gradient shape mismatch");
  const T kk = static_cast<T>(k);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += kk * g[i];
}

template <class T>
void add_scaled(WeightStore<T>& acc, const WeightStore<T>& g, double k = 1.0) {
  const T kk = static_cast<T>(k);
  for (auto& [key, p] : acc.entries) {
    const Param<T>& q = g.at(key);
    for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] += kk * q.weight[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] += kk * q.bias[i];
  }
}

template <class T>
void scale_in_place(WeightStore<T>& s, double k) {
  const T kk = static_cast<T>(k);
  s.for_each_array([&](std::span<T> a) {
    for (auto& v : a) v *= kk;
  });
}

inline bool finite(const LossParts& p) {
  return std::isfinite(p.recon) && std::isfinite(p.distill_g) && std::isfinite(p.distill_d) &&
         std::isfinite(p.percep) && std::isfinite(p.adv);
}

inline nlohmann::json parts_json(const LossParts& p) {
  return {{"recon", p.recon}, {"distill_g", p.distill_g}, {"distill_d", p.distill_d}, {"percep", p.percep},
          {"adv", p.adv}};
}

inline void check_divergence(Stage s, int it, const LossParts& p, double extra = 0.0) {
  if (finite(p) && std::isfinite(extra)) return;
  throw DivergenceError(std::string(stage_name(s)) + " diverged at iteration " + std::to_string(it) +
                        ": loss parts " + parts_json(p).dump() + ", discriminator loss " + std::to_string(extra));
}

// Per-iteration bookkeeping shared by every loop.
class Recorder {
 public:
  Recorder(Stage s, const TrainConfig& cfg, const StageIO& io) : stage_(s), cfg_(cfg), io_(io) {}

  // `eval` returns the validation PSNR of the current weights.
  void step(int it, const LossParts& p, double lr, const std::function<double()>& eval,
            std::optional<double> disc = std::nullopt) {
    const double total = total_loss(p, cfg_.lambda);
    res.parts.push_back(p);
    res.total.push_back(total);
    const int n = cfg_.schedule.iterations;
    const bool last = it + 1 == n;
    const bool do_eval = io_.val && !io_.val->empty() &&
                         (last || (cfg_.eval_every > 0 && (it + 1) % cfg_.eval_every == 0));
    std::optional<double> psnr;
    if (do_eval) {
      psnr = eval();
      if (last) res.psnr_val = *psnr;
    }
    if (!io_.sink || (!last && !do_eval && (it + 1) % cfg_.log_every != 0)) return;
    nlohmann::json j{{"iter", it + 1},
                     {"stage", stage_name(stage_)},
                     {"loss_total", total},
                     {"loss_parts", parts_json(p)},
                     {"psnr_val", psnr ? nlohmann::json(*psnr) : nlohmann::json()},
                     {"lr", lr},
                     {"wallclock_ms", std::chrono::duration<double, std::milli>(Clock::now() - start_).count()}};
    if (disc) j["loss_disc"] = *disc;
    io_.sink(j);
  }

  StageResult res;

 private:
  using Clock = std::chrono::steady_clock;
  Stage stage_;
  const TrainConfig& cfg_;
  const StageIO& io_;
  Clock::time_point start_ = Clock::now();
};

inline void check_config(const TrainConfig& cfg, const StageIO& io) {
  if (auto v = cfg.violations(); !v.empty()) throw ConfigError("invalid training config: " + v.front());
  if (!io.train) throw ConfigError("no training data");
}

}  // namespace detail

// Generator-only training on L1 (+ perceptual when lambda.percep > 0).
inline StageResult train_pretrain(Model& g, const TrainConfig& cfg, const StageIO& io) {
  detail::check_config(cfg, io);
  if (cfg.lambda.percep > 0 && !io.phi) throw ConfigError("perceptual term needs a feature extractor");
  check_store(g.weights, g.graph);
  const PatchSampler sampler(*io.train, cfg.hr_patch, cfg.scale, cfg.seed);
  AdamState<float> adam(g.weights, cfg.adam);
  detail::Recorder rec(Stage::PretrainL1, cfg, io);
  const int border = cfg.scale;
  for (int it = 0; it < cfg.schedule.iterations; ++it) {
    const double lr = cfg.schedule.lr_at(it);
    const TrainingBatch b = sampler.sample(it, cfg.batch);
    auto fw = forward(g.graph, g.weights, b.lr, false);
    LossParts p;
    const auto rl = loss_recon(fw.output, b.hr);
    p.recon = rl.value;
    Tensor<float> dsr;
    detail::add_scaled(dsr, rl.grad, cfg.lambda.recon);
    if (cfg.lambda.percep > 0) {
      const auto pl = loss_percep(fw.output, b.hr, *io.phi);
      p.percep = pl.value;
      detail::add_scaled(dsr, pl.grad, cfg.lambda.percep);
    }
    detail::check_divergence(Stage::PretrainL1, it, p);
    const auto grads = backward(g.graph, g.weights, fw.trace, dsr, detail::kNoTaps, false);
    adam.step(g.weights, grads.params, lr);
    rec.step(it, p, lr, [&] { return io.val->mean_psnr(g.graph, g.weights, border); });
  }
  return rec.res;
}

// Frozen teachers for joint distillation. Adapters are created on the first
// batch and trained alongside the students; callers discard them afterwards.
struct Teachers {
  const Model* g = nullptr;
  const Model* d = nullptr;
};

// Alternating 1:1 discriminator / generator updates. Used for large-model
// adversarial training, joint distillation and SubGenerator fine-tuning.
inline StageResult train_adversarial(Stage stage, Model& g, Model& d, const TrainConfig& cfg, const StageIO& io,
                                     const Teachers& teachers = {}) {
  detail::check_config(cfg, io);
  const LossWeights& lam = cfg.lambda;
  if (lam.percep > 0 && !io.phi) throw ConfigError("perceptual term needs a feature extractor");
  const bool distill_g = lam.distill_g > 0;
  const bool distill_d = lam.distill_d > 0;
  if (distill_g && !teachers.g) throw PipelineError("generator distillation needs a teacher generator");
  if (distill_d && !teachers.d) throw PipelineError("discriminator distillation needs a teacher discriminator");
  check_store(g.weights, g.graph);
  check_store(d.weights, d.graph);

  const PatchSampler sampler(*io.train, cfg.hr_patch, cfg.scale, cfg.seed);
  AdamState<float> adam_g(g.weights, cfg.adam);
  AdamState<float> adam_d(d.weights, cfg.adam);
  DistillAdapters<float> ad_g, ad_d;
  AdamState<float> adam_ag, adam_ad;
  if (distill_g || distill_d) {
    const TrainingBatch probe = sampler.sample(0, 1);
    const Rng root(cfg.seed);
    if (distill_g) {
      ad_g = DistillAdapters<float>::create(forward(teachers.g->graph, teachers.g->weights, probe.lr).taps,
                                            forward(g.graph, g.weights, probe.lr).taps, root.split(1).next_u64());
      adam_ag = AdamState<float>(ad_g.weights, cfg.adam);
    }
    if (distill_d) {
      ad_d = DistillAdapters<float>::create(forward(teachers.d->graph, teachers.d->weights, probe.hr).taps,
                                            forward(d.graph, d.weights, probe.hr).taps, root.split(2).next_u64());
      adam_ad = AdamState<float>(ad_d.weights, cfg.adam);
    }
  }

  detail::Recorder rec(stage, cfg, io);
  const int border = cfg.scale;
  for (int it = 0; it < cfg.schedule.iterations; ++it) {
    const double lr = cfg.schedule.lr_at(it);
    const TrainingBatch b = sampler.sample(it, cfg.batch);
    LossParts p;

    auto gf = forward(g.graph, g.weights, b.lr, distill_g);
    const Tensor<float>& sr = gf.output;

    // Discriminator step: BCE on real/fake plus feature distillation on real.
    auto dr = forward(d.graph, d.weights, b.hr, distill_d);
    auto dfk = forward(d.graph, d.weights, sr, false);
    const auto dl = loss_disc(dr.output, dfk.output);
    TapSet<float> dtap;
    if (distill_d) {
      const auto td = forward(teachers.d->graph, teachers.d->weights, b.hr).taps;
      auto dd = loss_distill_d(td, dr.taps, ad_d.weights.entries.empty() ? nullptr : &ad_d, cfg.norm);
      p.distill_d = dd.value;
      for (auto& [label, t] : dd.student_grads) {
        for (auto& v : t.data()) v *= static_cast<float>(lam.distill_d);
        dtap.emplace(label, std::move(t));
      }
      if (!ad_d.weights.entries.empty()) {
        detail::scale_in_place(dd.adapter_grads, lam.distill_d);
        adam_ad.step(ad_d.weights, dd.adapter_grads, lr);
      }
    }
    {
      auto gd = backward(d.graph, d.weights, dr.trace, dl.grad_real, distill_d ? &dtap : nullptr, false);
      const auto gfk = backward(d.graph, d.weights, dfk.trace, dl.grad_fake, detail::kNoTaps, false);
      detail::add_scaled(gd.params, gfk.params);
      if (!std::isfinite(dl.value)) detail::check_divergence(stage, it, p, dl.value);
      adam_d.step(d.weights, gd.params, lr);
    }

    // Generator step against the updated discriminator.
    Tensor<float> dsr;
    const auto rl = loss_recon(sr, b.hr);
    p.recon = rl.value;
    detail::add_scaled(dsr, rl.grad, lam.recon);
    if (lam.percep > 0) {
      const auto pl = loss_percep(sr, b.hr, *io.phi);
      p.percep = pl.value;
      detail::add_scaled(dsr, pl.grad, lam.percep);
    }
    if (lam.adv > 0) {
      auto df = forward(d.graph, d.weights, sr, false);
      const auto al = loss_adv_g(df.output);
      p.adv = al.value;
      detail::add_scaled(dsr, backward(d.graph, d.weights, df.trace, al.grad, detail::kNoTaps, true).input, lam.adv);
    }
    TapSet<float> gtap;
    if (distill_g) {
      const auto tg = forward(teachers.g->graph, teachers.g->weights, b.lr).taps;
      auto dg = loss_distill_g(tg, gf.taps, ad_g.weights.entries.empty() ? nullptr : &ad_g, cfg.norm);
      p.distill_g = dg.value;
      for (auto& [label, t] : dg.student_grads) {
        for (auto& v : t.data()) v *= static_cast<float>(lam.distill_g);
        gtap.emplace(label, std::move(t));
      }
      if (!ad_g.weights.entries.empty()) {
        detail::scale_in_place(dg.adapter_grads, lam.distill_g);
        adam_ag.step(ad_g.weights, dg.adapter_grads, lr);
      }
    }
    detail::check_divergence(stage, it, p, dl.value);
    const auto gg = backward(g.graph, g.weights, gf.trace, dsr, distill_g ? &gtap : nullptr, false);
    adam_g.step(g.weights, gg.params, lr);
    rec.step(it, p, lr, [&] { return io.val->mean_psnr(g.graph, g.weights, border); }, dl.value);
  }
  return rec.res;
}

// Single-path SuperGenerator training: every step samples one genotype
// uniformly, slices its prefix weights, and updates only those scalars.
inline StageResult train_supernet(WeightStore<float>& super, const Genotype& super_g, const GeneSpace& space,
                                  const MfanetOptions& opt, const TrainConfig& cfg, const StageIO& io) {
  detail::check_config(cfg, io);
  if (cfg.lambda.percep > 0 && !io.phi) throw ConfigError("perceptual term needs a feature extractor");
  if (!space.contains(super_g) || super_g != space.max_genotype()) {
    throw SliceError("supernet store must be fitted to the max genotype " + space.max_genotype().str());
  }
  const NetworkGraph gsup = build_mfanet(super_g, opt);
  check_store(super, gsup);
  super.genotype_tag = super_g;

  const PatchSampler sampler(*io.train, cfg.hr_patch, cfg.scale, cfg.seed);
  AdamState<float> adam(super, cfg.adam);
  const Rng arch_root = Rng(cfg.seed).split(0x61726368ULL);
  std::map<Genotype, std::pair<NetworkGraph, SliceMap>> cache;
  detail::Recorder rec(Stage::TrainSupernet, cfg, io);
  const int border = cfg.scale;
  for (int it = 0; it < cfg.schedule.iterations; ++it) {
    const double lr = cfg.schedule.lr_at(it);
    Rng arch = arch_root.split(static_cast<std::uint64_t>(it));
    std::array<int, kGeneCount> genes{};
    for (int& x : genes) x = space.choices[arch.below(3)];
    const Genotype sub_g(genes);
    auto cit = cache.find(sub_g);
    if (cit == cache.end()) {
      NetworkGraph gs = build_mfanet(sub_g, opt);
      SliceMap m = build_slice_map(gsup, gs);
      cit = cache.emplace(sub_g, std::make_pair(std::move(gs), std::move(m))).first;
    }
    const auto& [graph, map] = cit->second;
    const WeightStore<float> sub = slice_store(super, map);

    const TrainingBatch b = sampler.sample(it, cfg.batch);
    auto fw = forward(graph, sub, b.lr, false);
    LossParts p;
    const auto rl = loss_recon(fw.output, b.hr);
    p.recon = rl.value;
    Tensor<float> dsr;
    detail::add_scaled(dsr, rl.grad, cfg.lambda.recon);
    if (cfg.lambda.percep > 0) {
      const auto pl = loss_percep(fw.output, b.hr, *io.phi);
      p.percep = pl.value;
      detail::add_scaled(dsr, pl.grad, cfg.lambda.percep);
    }
    detail::check_divergence(Stage::TrainSupernet, it, p);
    const auto grads = backward(graph, sub, fw.trace, dsr, detail::kNoTaps, false);
    adam.step_indexed(super, grads.params, map, lr);
    rec.step(it, p, lr, [&] { return io.val->mean_psnr(gsup, super, border); });
  }
  return rec.res;
}

}  // namespace mfa

#endif  // MFA_ENGINE_STAGES_HPP_
