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

#ifndef MFA_ENGINE_LOSSES_HPP_
#define MFA_ENGINE_LOSSES_HPP_

// The five training objectives and their gradients. Every loss returns its
// value together with the gradient w.r.t. each tensor argument it depends on.

#include <cmath>
#include <string>
#include <vector>

#include "mfa/engine/executor.hpp"
#include "mfa/error.hpp"
#include "mfa/ops.hpp"
#include "mfa/tensor.hpp"
#include "mfa/weights.hpp"

namespace mfa {

template <class T>
struct LossGrad {
  T value = 0;
  Tensor<T> grad;
};

// Mean absolute error over every element of the batch.
template <class T>
LossGrad<T> loss_recon(const Tensor<T>& sr, const Tensor<T>& gt) {
  if (!(sr.shape() == gt.shape())) throw ShapeError("loss_recon: " + sr.shape().str() + " vs " + gt.shape().str());
  LossGrad<T> r{0, Tensor<T>(sr.shape())};
  const T inv = T{1} / static_cast<T>(sr.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    const T d = sr[i] - gt[i];
    acc += std::abs(static_cast<double>(d));
    r.grad[i] = d > T{0} ? inv : (d < T{0} ? -inv : T{0});
  }
  r.value = static_cast<T>(acc / static_cast<double>(sr.size()));
  return r;
}

// How the per-tap Euclidean distance is normalized. Rms divides by the
// square root of the element count, so the term does not grow with tap size.
enum class NormConvention { Rms, Euclidean };

// 1x1 projections from student tap width to teacher tap width, keyed by tap
// label. Taps whose widths already match have no entry and pass through.
template <class T>
struct DistillAdapters {
  WeightStore<T> weights;

  bool has(const std::string& label) const { return weights.contains(label); }

  static DistillAdapters create(const TapSet<T>& teacher, const TapSet<T>& student, std::uint64_t seed) {
    DistillAdapters a;
    const Rng root(seed);
    for (const auto& [label, t] : teacher) {
      auto it = student.find(label);
      if (it == student.end()) throw TapError("student has no tap '" + label + "'");
      const int ct = t.shape().c;
      const int cs = it->second.shape().c;
      if (ct == cs) continue;
      Rng rng = root.split(fnv1a(label));
      Tensor<T> w(Shape{ct, cs, 1, 1});
      const double sd = std::sqrt(1.0 / cs);
      for (auto& v : w.data()) v = static_cast<T>(sd * rng.normal());
      a.weights.entries[label] = Param<T>{std::move(w), std::vector<T>(static_cast<std::size_t>(ct), T{0})};
    }
    return a;
  }
};

template <class T>
struct DistillGrad {
  T value = 0;
  TapSet<T> student_grads;
  WeightStore<T> adapter_grads;
};

// (1/n) sum_i dist(teacher_i, adapter_i(student_i)) over the given labels.
template <class T>
DistillGrad<T> loss_distill(const TapSet<T>& teacher, const TapSet<T>& student, const std::vector<std::string>& labels,
                            const DistillAdapters<T>* adapters = nullptr, NormConvention norm = NormConvention::Rms) {
  DistillGrad<T> r;
  if (adapters) r.adapter_grads = adapters->weights.zeros_like();
  const T inv_n = T{1} / static_cast<T>(labels.size());
  double total = 0.0;
  for (const auto& label : labels) {
    auto ti = teacher.find(label);
    auto si = student.find(label);
    if (ti == teacher.end()) throw TapError("teacher is missing tap '" + label + "'");
    if (si == student.end()) throw TapError("student is missing tap '" + label + "'");
    const Tensor<T>& s = si->second;
    const bool adapted = adapters && adapters->has(label);
    Tensor<T> projected;
    if (adapted) {
      const Param<T>& p = adapters->weights.at(label);
      projected = conv2d(s, p.weight, std::span<const T>(p.bias), 1, 0);
    }
    const Tensor<T>& sp = adapted ? projected : s;
    if (!(sp.shape() == ti->second.shape())) {
      throw ShapeError("tap '" + label + "': teacher " + ti->second.shape().str() + " vs student " + sp.shape().str());
    }
    Tensor<T> diff(sp.shape());
    double sq = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
      diff[i] = sp[i] - ti->second[i];
      sq += static_cast<double>(diff[i]) * diff[i];
    }
    const double norm2 = std::sqrt(sq);
    const double scale = norm == NormConvention::Rms ? std::sqrt(static_cast<double>(diff.size())) : 1.0;
    total += norm2 / scale;
    // d||d||/dd = d / ||d||; zero at the origin.
    const T k = norm2 > 0.0 ? static_cast<T>(1.0 / (norm2 * scale)) * inv_n : T{0};
    for (auto& v : diff.data()) v *= k;
    if (adapted) {
      Tensor<T> ds;
      Param<T>& gp = r.adapter_grads.at(label);
      conv2d_backward(s, adapters->weights.at(label).weight, 1, 0, diff, &ds, &gp.weight, std::span<T>(gp.bias));
      r.student_grads[label] = std::move(ds);
    } else {
      r.student_grads[label] = std::move(diff);
    }
  }
  r.value = static_cast<T>(total) * inv_n;
  return r;
}

template <class T>
DistillGrad<T> loss_distill_g(const TapSet<T>& teacher, const TapSet<T>& student, const DistillAdapters<T>* adapters,
                              NormConvention norm = NormConvention::Rms) {
  return loss_distill(teacher, student, {"g1", "g2", "g3"}, adapters, norm);
}

template <class T>
DistillGrad<T> loss_distill_d(const TapSet<T>& teacher, const TapSet<T>& student,
                              const DistillAdapters<T>* adapters = nullptr, NormConvention norm = NormConvention::Rms) {
  return loss_distill(teacher, student, {"d2", "d4", "d6"}, adapters, norm);
}

// Frozen feature network used by the perceptual term.
template <class T>
struct FeatureExtractor {
  NetworkGraph graph;
  WeightStore<T> weights;

  Tensor<T> features(const Tensor<T>& x) const { return forward(graph, weights, x, false).output; }
};

// MSE between extractor features of sr and gt; gradient w.r.t. sr only.
template <class T>
LossGrad<T> loss_percep(const Tensor<T>& sr, const Tensor<T>& gt, const FeatureExtractor<T>& phi) {
  if (!(sr.shape() == gt.shape())) throw ShapeError("loss_percep: " + sr.shape().str() + " vs " + gt.shape().str());
  auto fs = forward(phi.graph, phi.weights, sr, false);
  const Tensor<T> fg = phi.features(gt);
  Tensor<T> d(fs.output.shape());
  double acc = 0.0;
  const T k = T{2} / static_cast<T>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const T diff = fs.output[i] - fg[i];
    acc += static_cast<double>(diff) * diff;
    d[i] = k * diff;
  }
  LossGrad<T> r;
  r.value = static_cast<T>(acc / static_cast<double>(d.size()));
  r.grad = backward(phi.graph, phi.weights, fs.trace, d).input;
  return r;
}

namespace detail {
template <class T>
T softplus(T x) {
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}
template <class T>
T sigm(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}
}  // namespace detail

// Generator adversarial term: mean over patches of -log sigmoid(logit).
template <class T>
LossGrad<T> loss_adv_g(const Tensor<T>& logits) {
  LossGrad<T> r{0, Tensor<T>(logits.shape())};
  const T inv = T{1} / static_cast<T>(logits.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    acc += detail::softplus(-logits[i]);
    r.grad[i] = -detail::sigm(-logits[i]) * inv;
  }
  r.value = static_cast<T>(acc / static_cast<double>(logits.size()));
  return r;
}

template <class T>
struct DiscLossGrad {
  T value = 0;
  Tensor<T> grad_real;
  Tensor<T> grad_fake;
};

// Non-saturating BCE for the discriminator:
// mean(-log sigmoid(real)) + mean(-log(1 - sigmoid(fake))).
template <class T>
DiscLossGrad<T> loss_disc(const Tensor<T>& real, const Tensor<T>& fake) {
  DiscLossGrad<T> r{0, Tensor<T>(real.shape()), Tensor<T>(fake.shape())};
  const T inv_r = T{1} / static_cast<T>(real.size());
  const T inv_f = T{1} / static_cast<T>(fake.size());
  double ar = 0.0;
  double af = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    ar += detail::softplus(-real[i]);
    r.grad_real[i] = -detail::sigm(-real[i]) * inv_r;
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    af += detail::softplus(fake[i]);
    r.grad_fake[i] = detail::sigm(fake[i]) * inv_f;
  }
  r.value = static_cast<T>(ar / static_cast<double>(real.size()) + af / static_cast<double>(fake.size()));
  return r;
}

struct LossWeights {
  double recon = 1.0;
  double distill_g = 0.0;
  double distill_d = 0.0;
  double percep = 0.0;
  double adv = 0.0;

  bool all_finite() const {
    return std::isfinite(recon) && std::isfinite(distill_g) && std::isfinite(distill_d) && std::isfinite(percep) &&
           std::isfinite(adv);
  }
  bool operator==(const LossWeights&) const = default;
};

struct LossParts {
  double recon = 0.0;
  double distill_g = 0.0;
  double distill_d = 0.0;
  double percep = 0.0;
  double adv = 0.0;
};

inline double total_loss(const LossParts& p, const LossWeights& w) {
  return w.recon * p.recon + w.distill_g * p.distill_g + w.distill_d * p.distill_d + w.percep * p.percep +
         w.adv * p.adv;
}

}  // namespace mfa

#endif  // MFA_ENGINE_LOSSES_HPP_
