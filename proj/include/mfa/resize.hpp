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

#ifndef MFA_RESIZE_HPP_
#define MFA_RESIZE_HPP_

#include <cmath>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

// Keys cubic convolution kernel with a = -0.5.
inline double cubic_kernel(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

namespace detail {

struct ResizeTaps {
  std::vector<int> index;      // out_len * taps, already mirrored into [0, in_len)
  std::vector<double> weight;  // out_len * taps, rows sum to 1
  int taps = 0;
};

// Follows the MATLAB imresize contribution rule: output pixel j samples the
// input at u = (j + 0.5) / scale - 0.5, and when shrinking with antialiasing
// the kernel is stretched by 1/scale. Out-of-range taps are mirrored
// symmetrically (edge pixel repeated).
inline ResizeTaps resize_taps(int in_len, int out_len, bool antialias) {
  const double scale = static_cast<double>(out_len) / in_len;
  const bool stretch = antialias && scale < 1.0;
  const double width = stretch ? 4.0 / scale : 4.0;
  ResizeTaps t;
  t.taps = static_cast<int>(std::ceil(width)) + 2;
  t.index.resize(static_cast<std::size_t>(out_len) * t.taps);
  t.weight.resize(t.index.size());
  const int period = 2 * in_len;
  for (int j = 0; j < out_len; ++j) {
    const double u = (j + 0.5) / scale - 0.5;
    const int left = static_cast<int>(std::floor(u - width / 2.0));
    double total = 0.0;
    for (int p = 0; p < t.taps; ++p) {
      const int i = left + p;
      const double d = u - i;
      const double wv = stretch ? scale * cubic_kernel(scale * d) : cubic_kernel(d);
      int m = ((i % period) + period) % period;
      if (m >= in_len) m = period - 1 - m;
      t.index[static_cast<std::size_t>(j) * t.taps + p] = m;
      t.weight[static_cast<std::size_t>(j) * t.taps + p] = wv;
      total += wv;
    }
    for (int p = 0; p < t.taps; ++p) t.weight[static_cast<std::size_t>(j) * t.taps + p] /= total;
  }
  return t;
}

}  // namespace detail

// Separable bicubic resampling (rows first, then columns).
template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& x, int out_h, int out_w, bool antialias) {
  const Shape& s = x.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output dims must be >= 1");
  if (s.h < 1 || s.w < 1) throw ShapeError("bicubic_resize: empty input");
  const auto th = detail::resize_taps(s.h, out_h, antialias);
  const auto tw = detail::resize_taps(s.w, out_w, antialias);
  Tensor<T> mid(Shape{s.n, s.c, out_h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      auto src = x.plane(n, c);
      auto dst = mid.plane(n, c);
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0.0;
          for (int p = 0; p < th.taps; ++p) {
            const std::size_t k = static_cast<std::size_t>(y) * th.taps + p;
            acc += th.weight[k] * static_cast<double>(src[static_cast<std::size_t>(th.index[k]) * s.w + xx]);
          }
          dst[static_cast<std::size_t>(y) * s.w + xx] = static_cast<T>(acc);
        }
    }
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      auto src = mid.plane(n, c);
      auto dst = out.plane(n, c);
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) {
          double acc = 0.0;
          for (int p = 0; p < tw.taps; ++p) {
            const std::size_t k = static_cast<std::size_t>(xx) * tw.taps + p;
            acc += tw.weight[k] * static_cast<double>(src[static_cast<std::size_t>(y) * s.w + tw.index[k]]);
          }
          dst[static_cast<std::size_t>(y) * out_w + xx] = static_cast<T>(acc);
        }
    }
  return out;
}

}  // namespace mfa

#endif  // MFA_RESIZE_HPP_
