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

#ifndef MFA_EVALUATE_HPP_
#define MFA_EVALUATE_HPP_

#include <map>
#include <utility>
#include <vector>

#include "mfa/dataio.hpp"
#include "mfa/engine/executor.hpp"
#include "mfa/error.hpp"
#include "mfa/graph.hpp"

namespace mfa {

// A validation set with same-sized LR images stacked into shared batches.
class EvalSet {
 public:
  EvalSet() = default;
  explicit EvalSet(std::vector<ImagePair> pairs) : pairs_(std::move(pairs)) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < pairs_.size(); ++i) groups[{pairs_[i].lr.h, pairs_[i].lr.w}].push_back(i);
    for (auto& [hw, idx] : groups) {
      std::vector<const ImageRGB*> imgs;
      for (auto i : idx) imgs.push_back(&pairs_[i].lr);
      batches_.push_back({stack_images<float>(imgs), std::move(idx)});
    }
  }

  bool empty() const { return pairs_.empty(); }
  std::size_t size() const { return pairs_.size(); }
  const std::vector<ImagePair>& pairs() const { return pairs_; }

  // Super-resolved image for every pair, in pair order.
  std::vector<ImageRGB> run(const NetworkGraph& g, const WeightStore<float>& w, std::size_t* forwards = nullptr) const {
    std::vector<ImageRGB> out(pairs_.size());
    for (const auto& b : batches_) {
      const Tensor<float> sr = forward(g, w, b.lr, false).output;
      if (forwards) ++*forwards;
      for (std::size_t k = 0; k < b.index.size(); ++k) out[b.index[k]] = ImageRGB::from_tensor(sr, static_cast<int>(k));
    }
    return out;
  }

  // Per-image PSNR-Y of the network output against HR.
  std::vector<double> psnr(const NetworkGraph& g, const WeightStore<float>& w, int border,
                           std::size_t* forwards = nullptr) const {
    const auto sr = run(g, w, forwards);
    std::vector<double> db;
    for (std::size_t i = 0; i < sr.size(); ++i) db.push_back(psnr_y(sr[i], pairs_[i].hr, border));
    return db;
  }

  double mean_psnr(const NetworkGraph& g, const WeightStore<float>& w, int border,
                   std::size_t* forwards = nullptr) const {
    if (pairs_.empty()) throw ConfigError("validation set is empty");
    double s = 0.0;
    for (double v : psnr(g, w, border, forwards)) s += v;
    return s / static_cast<double>(pairs_.size());
  }

  // Bicubic-upscale baseline, per image.
  std::vector<double> bicubic_psnr(int scale, int border) const {
    std::vector<double> db;
    for (const auto& p : pairs_) db.push_back(psnr_y(upscale_bicubic(p.lr, scale), p.hr, border));
    return db;
  }

 private:
  struct Batch {
    Tensor<float> lr;
    std::vector<std::size_t> index;
  };
  std::vector<ImagePair> pairs_;
  std::vector<Batch> batches_;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace mfa

#endif  // MFA_EVALUATE_HPP_
