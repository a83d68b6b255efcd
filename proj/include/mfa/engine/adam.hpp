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

#ifndef MFA_ENGINE_ADAM_HPP_
#define MFA_ENGINE_ADAM_HPP_

#include <cmath>
#include <cstdint>

#include "mfa/error.hpp"
#include "mfa/sharing.hpp"
#include "mfa/weights.hpp"

namespace mfa {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moments are shaped like the store they update.
template <class T>
class AdamState {
 public:
  AdamState() = default;
  AdamState(const WeightStore<T>& like, AdamConfig cfg) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  void step(WeightStore<T>& params, const WeightStore<T>& grads, double lr) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [key, p] : params.entries) {
      const Param<T>& g = grads.at(key);
      Param<T>& m = m_.at(key);
      Param<T>& v = v_.at(key);
      if (!(g.weight.shape() == p.weight.shape())) throw ShapeError("adam: gradient shape mismatch for " + key);
      update(p.weight.data(), g.weight.data(), m.weight.data(), v.weight.data(), lr, c1, c2);
      update(std::span<T>(p.bias), std::span<const T>(g.bias), std::span<T>(m.bias), std::span<T>(v.bias), lr, c1, c2);
    }
  }

  // Updates only the scalars a SubGenerator reads: `grads` is shaped like the
  // sub store and `map` places each of its scalars in the super store.
  // Everything outside that region, including its moments, is untouched.
  void step_indexed(WeightStore<T>& super, const WeightStore<T>& grads, const SliceMap& map, double lr) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (const auto& [key, im] : map) {
      Param<T>& p = super.at(key);
      Param<T>& m = m_.at(key);
      Param<T>& v = v_.at(key);
      const Param<T>& g = grads.at(key);
      const auto idx = flat_weight_indices(im, p.weight.shape().c);
      if (idx.size() != g.weight.size()) throw ShapeError("adam: slice map does not match gradient for " + key);
      for (std::size_t j = 0; j < idx.size(); ++j)
        update_one(p.weight[idx[j]], g.weight[j], m.weight[idx[j]], v.weight[idx[j]], lr, c1, c2);
      for (std::size_t j = 0; j < im.out.size(); ++j) {
        const auto o = static_cast<std::size_t>(im.out[j]);
        update_one(p.bias[o], g.bias[j], m.bias[o], v.bias[o], lr, c1, c2);
      }
    }
  }

 private:
  void update_one(T& p, T g, T& m, T& v, double lr, double c1, double c2) const {
    m = static_cast<T>(cfg_.beta1 * m + (1.0 - cfg_.beta1) * g);
    v = static_cast<T>(cfg_.beta2 * v + (1.0 - cfg_.beta2) * static_cast<double>(g) * g);
    const double mhat = m / c1;
    const double vhat = v / c2;
    p = static_cast<T>(p - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
  }

  void update(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v, double lr, double c1,
              double c2) const {
    for (std::size_t i = 0; i < p.size(); ++i) update_one(p[i], g[i], m[i], v[i], lr, c1, c2);
  }

  AdamConfig cfg_{};
  WeightStore<T> m_;
  WeightStore<T> v_;
  std::int64_t step_ = 0;
};

}  // namespace mfa

#endif  // MFA_ENGINE_ADAM_HPP_
