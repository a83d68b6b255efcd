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

#ifndef MFA_OPS_HPP_
#define MFA_OPS_HPP_

// Numeric kernels on NCHW tensors. Every kernel is a pure function of its
// arguments; the optional OpCounter records the floating-point work the
// kernel actually executes (used by the cost-model oracle).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

struct OpCounter {
  std::uint64_t flops = 0;
  std::uint64_t bytes = 0;
};

namespace detail {

inline void count(OpCounter* c, std::uint64_t f) {
  if (c) c->flops += f;
}

template <class T>
inline void axpy(T a, const T* __restrict x, T* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
inline T sum(const T* a, std::size_t n) {
  T acc[4] = {};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (int j = 0; j < 4; ++j) acc[j] += a[i + j];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
}

// Unrolls (cin, k, k) receptive fields into rows of a (cin*k*k) x (ho*wo)
// matrix; padded taps are zeros.
template <class T>
void im2col(const T* in, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const std::size_t n_out = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    const T* src = in + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* row = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::clamp(-shift, 0, wo);
            const int hi = std::clamp(w - shift, lo, wo);
            std::fill(row, row + lo, T{0});
            std::copy(srow + lo + shift, srow + hi + shift, row + lo);
            std::fill(row + hi, row + wo, T{0});
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[ox] = (ix >= 0 && ix < w) ? srow[ix] : T{0};
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into the input image.
template <class T>
void col2im(const T* col, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* out) {
  const std::size_t n_out = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    T* dst = out + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * n_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* row = src + static_cast<std::size_t>(oy) * wo;
          T* drow = dst + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace detail

struct ConvGeometry {
  int cin = 0;
  int cout = 0;
  int k = 1;
  int stride = 1;
  int pad = 0;
};

template <class T>
ConvGeometry check_conv(const Tensor<T>& input, const Tensor<T>& weight, std::size_t bias_len, int stride,
                        int pad) {
  const Shape& ws = weight.shape();
  ConvGeometry g{ws.c, ws.n, ws.h, stride, pad};
  if (ws.h != ws.w || (g.k != 1 && g.k != 3)) throw ShapeError("conv kernel must be 1x1 or 3x3, got " + ws.str());
  if (stride != 1 && stride != 2) throw ShapeError("conv stride must be 1 or 2");
  if (pad < 0) throw ShapeError("negative conv padding");
  if (input.shape().c != g.cin) {
    throw ShapeError("conv input has " + std::to_string(input.shape().c) + " channels, weight expects " +
                     std::to_string(g.cin));
  }
  if (bias_len != 0 && bias_len != static_cast<std::size_t>(g.cout)) throw ShapeError("conv bias length mismatch");
  if (input.shape().h + 2 * pad < g.k || input.shape().w + 2 * pad < g.k) {
    throw ShapeError("conv input " + input.shape().str() + " smaller than kernel");
  }
  return g;
}

// Cross-correlation with zero padding. weight is (cout, cin, k, k); an empty
// bias means zero bias.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias, int stride, int pad,
                 OpCounter* counter = nullptr) {
  const ConvGeometry g = check_conv(input, weight, bias.size(), stride, pad);
  const Shape& is = input.shape();
  const int ho = detail::conv_out(is.h, g.k, stride, pad);
  const int wo = detail::conv_out(is.w, g.k, stride, pad);
  Tensor<T> out(Shape{is.n, g.cout, ho, wo});
  const std::size_t np = static_cast<std::size_t>(ho) * wo;
  const std::size_t kdim = static_cast<std::size_t>(g.cin) * g.k * g.k;
  const bool direct = g.k == 1 && stride == 1 && pad == 0;
  std::vector<T> col(direct ? 0 : kdim * np);
  const T* wdata = weight.data().data();
  constexpr std::size_t kBlock = 512;
  for (int n = 0; n < is.n; ++n) {
    const T* in_n = input.data().data() + static_cast<std::size_t>(n) * is.c * is.h * is.w;
    const T* cmat = in_n;
    if (!direct) {
      detail::im2col(in_n, g.cin, is.h, is.w, g.k, stride, pad, ho, wo, col.data());
      cmat = col.data();
    }
    T* out_n = out.data().data() + static_cast<std::size_t>(n) * g.cout * np;
    for (std::size_t p0 = 0; p0 < np; p0 += kBlock) {
      const std::size_t len = std::min(kBlock, np - p0);
      for (int co = 0; co < g.cout; ++co) {
        T* y = out_n + co * np + p0;
        const T b = bias.empty() ? T{0} : bias[co];
        std::fill(y, y + len, b);
        const T* wrow = wdata + co * kdim;
        for (std::size_t kk = 0; kk < kdim; ++kk) detail::axpy(wrow[kk], cmat + kk * np + p0, y, len);
        detail::count(counter, 2 * kdim * len + len);
      }
    }
  }
  return out;
}

// Reverse pass of conv2d. Gradients are accumulated into dweight/dbias;
// dinput (if non-null) is overwritten.
template <class T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, int stride, int pad, const Tensor<T>& dout,
                     Tensor<T>* dinput, Tensor<T>* dweight, std::span<T> dbias) {
  const ConvGeometry g = check_conv(input, weight, 0, stride, pad);
  const Shape& is = input.shape();
  const int ho = detail::conv_out(is.h, g.k, stride, pad);
  const int wo = detail::conv_out(is.w, g.k, stride, pad);
  if (!(dout.shape() == Shape{is.n, g.cout, ho, wo})) throw ShapeError("conv upstream gradient shape mismatch");
  const std::size_t np = static_cast<std::size_t>(ho) * wo;
  const std::size_t kdim = static_cast<std::size_t>(g.cin) * g.k * g.k;
  const bool direct = g.k == 1 && stride == 1 && pad == 0;
  std::vector<T> col(direct ? 0 : kdim * np);
  std::vector<T> dcol(dinput ? kdim * np : 0);
  if (dinput) *dinput = Tensor<T>(is);
  const T* wdata = weight.data().data();
  for (int n = 0; n < is.n; ++n) {
    const T* in_n = input.data().data() + static_cast<std::size_t>(n) * is.c * is.h * is.w;
    const T* dy_n = dout.data().data() + static_cast<std::size_t>(n) * g.cout * np;
    const T* cmat = in_n;
    if (!direct && dweight) {
      detail::im2col(in_n, g.cin, is.h, is.w, g.k, stride, pad, ho, wo, col.data());
      cmat = col.data();
    }
    if (dweight) {
      T* dw = dweight->data().data();
      for (int co = 0; co < g.cout; ++co) {
        const T* dy = dy_n + co * np;
        for (std::size_t kk = 0; kk < kdim; ++kk) dw[co * kdim + kk] += detail::dot(dy, cmat + kk * np, np);
      }
    }
    if (!dbias.empty()) {
      for (int co = 0; co < g.cout; ++co) dbias[co] += detail::sum(dy_n + co * np, np);
    }
    if (dinput) {
      T* din_n = dinput->data().data() + static_cast<std::size_t>(n) * is.c * is.h * is.w;
      T* target = direct ? din_n : dcol.data();
      if (!direct) std::fill(dcol.begin(), dcol.end(), T{0});
      for (int co = 0; co < g.cout; ++co) {
        const T* dy = dy_n + co * np;
        const T* wrow = wdata + co * kdim;
        for (std::size_t kk = 0; kk < kdim; ++kk) detail::axpy(wrow[kk], dy, target + kk * np, np);
      }
      if (!direct) detail::col2im(dcol.data(), g.cin, is.h, is.w, g.k, stride, pad, ho, wo, din_n);
    }
  }
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope, OpCounter* counter = nullptr) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = std::max(in[i], slope * in[i]);
  detail::count(counter, in.size());
  return out;
}

// d/dx of leaky_relu: 1 where x > 0, slope elsewhere.
template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, T slope, const Tensor<T>& dout) {
  Tensor<T> dx(x.shape());
  auto in = x.data();
  auto g = dout.data();
  auto o = dx.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T{0} ? g[i] : slope * g[i];
  return dx;
}

// Sub-pixel rearrangement: out[n, c, y*r+i, x*r+j] = in[n, c*r*r + i*r + j, y, x].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  const Shape& s = x.shape();
  if (r < 1 || s.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(s.c) + " channels not divisible by r^2=" +
                     std::to_string(r * r));
  }
  const int co = s.c / (r * r);
  Tensor<T> out(Shape{s.n, co, s.h * r, s.w * r});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < co; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const auto src = x.plane(n, c * r * r + i * r + j);
          for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx) out.at(n, c, y * r + i, xx * r + j) = src[y * s.w + xx];
        }
  return out;
}

// Inverse rearrangement (space-to-depth); also the adjoint of pixel_shuffle.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  const Shape& s = x.shape();
  if (r < 1 || s.h % r != 0 || s.w % r != 0) throw ShapeError("pixel_unshuffle: spatial dims not divisible by r");
  const int ho = s.h / r;
  const int wo = s.w / r;
  Tensor<T> out(Shape{s.n, s.c * r * r, ho, wo});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          auto dst = out.plane(n, c * r * r + i * r + j);
          for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) dst[y * wo + xx] = x.at(n, c, y * r + i, xx * r + j);
        }
  return out;
}

template <class T>
struct ChannelStats {
  Tensor<T> mean;  // (n, c, 1, 1)
  Tensor<T> std;   // (n, c, 1, 1), population standard deviation
};

template <class T>
ChannelStats<T> channel_stats(const Tensor<T>& x, OpCounter* counter = nullptr) {
  const Shape& s = x.shape();
  if (s.h * s.w < 1) throw ShapeError("channel_stats on empty spatial extent");
  ChannelStats<T> st{Tensor<T>(Shape{s.n, s.c, 1, 1}), Tensor<T>(Shape{s.n, s.c, 1, 1})};
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const auto p = x.plane(n, c);
      const T m = detail::sum(p.data(), hw) / static_cast<T>(hw);
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        const T d = p[i] - m;
        acc += d * d;
      }
      st.mean.at(n, c, 0, 0) = m;
      st.std.at(n, c, 0, 0) = std::sqrt(acc / static_cast<T>(hw));
    }
  // mean: hw adds + 1 divide; variance: 3 per element + divide + sqrt.
  detail::count(counter, static_cast<std::uint64_t>(s.n) * s.c * (4 * hw + 3));
  return st;
}

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts.front()->shape();
  int c = 0;
  for (const Tensor<T>* p : parts) {
    const Shape& s = p->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) throw ShapeError("concat: " + s.str() + " vs " + s0.str());
    c += s.c;
  }
  Tensor<T> out(Shape{s0.n, c, s0.h, s0.w});
  const std::size_t hw = s0.plane();
  for (int n = 0; n < s0.n; ++n) {
    T* dst = out.data().data() + static_cast<std::size_t>(n) * c * hw;
    for (const Tensor<T>* p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->shape().c) * hw;
      const T* src = p->data().data() + static_cast<std::size_t>(n) * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_channels<T>(std::span<const Tensor<T>* const>(ptrs));
}

// Splits a gradient for a concatenation back into per-part gradients.
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const int> widths) {
  const Shape& s = x.shape();
  std::vector<Tensor<T>> out;
  const std::size_t hw = s.plane();
  int offset = 0;
  for (int cw : widths) {
    Tensor<T> part(Shape{s.n, cw, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
      const T* src = x.data().data() + (static_cast<std::size_t>(n) * s.c + offset) * hw;
      std::copy(src, src + cw * hw, part.data().data() + static_cast<std::size_t>(n) * cw * hw);
    }
    offset += cw;
    out.push_back(std::move(part));
  }
  if (offset != s.c) throw ShapeError("split widths do not cover tensor channels");
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y, OpCounter* counter = nullptr) {
  if (!(x.shape() == y.shape())) throw ShapeError("add: " + x.shape().str() + " vs " + y.shape().str());
  Tensor<T> out(x.shape());
  auto a = x.data();
  auto b = y.data();
  auto o = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] + b[i];
  detail::count(counter, a.size());
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x, OpCounter* counter = nullptr) {
  Tensor<T> out(x.shape());
  auto a = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) o[i] = T{1} / (T{1} + std::exp(-a[i]));
  detail::count(counter, a.size());
  return out;
}

// Multiplies every (n, c) plane by factors (n, c, 1, 1).
template <class T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& factors, OpCounter* counter = nullptr) {
  const Shape& s = x.shape();
  if (!(factors.shape() == Shape{s.n, s.c, 1, 1})) {
    throw ShapeError("scale_channels: factors " + factors.shape().str() + " for " + s.str());
  }
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T f = factors.at(n, c, 0, 0);
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * f;
    }
  detail::count(counter, s.numel());
  return out;
}

}  // namespace mfa

#endif  // MFA_OPS_HPP_
