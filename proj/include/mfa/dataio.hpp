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

#ifndef MFA_DATAIO_HPP_
#define MFA_DATAIO_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/resize.hpp"
#include "mfa/rng.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

// Planar RGB image with channel values in [0, 1].
struct ImageRGB {
  int h = 0;
  int w = 0;
  std::vector<double> data;  // c * h * w

  ImageRGB() = default;
  ImageRGB(int height, int width, double fill = 0.0)
      : h(height), w(width), data(static_cast<std::size_t>(3) * height * width, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }

  void clamp() {
    for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
  }

  template <class T = float>
  Tensor<T> to_tensor() const {
    return Tensor<T>(Shape{1, 3, h, w}, std::vector<T>(data.begin(), data.end()));
  }

  // Takes batch item n of an (N, 3, h, w) tensor, clamped to [0, 1].
  template <class T>
  static ImageRGB from_tensor(const Tensor<T>& t, int n = 0) {
    const Shape& s = t.shape();
    if (s.c != 3) throw ShapeError("image tensors need 3 channels, got " + s.str());
    ImageRGB img(s.h, s.w);
    const std::size_t len = static_cast<std::size_t>(3) * s.h * s.w;
    const T* src = t.data().data() + static_cast<std::size_t>(n) * len;
    for (std::size_t i = 0; i < len; ++i) img.data[i] = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    return img;
  }

  bool operator==(const ImageRGB&) const = default;
};

struct ImagePair {
  ImageRGB lr;
  ImageRGB hr;
};

// Stacks same-sized images into an (N, 3, h, w) tensor.
template <class T = float>
Tensor<T> stack_images(const std::vector<const ImageRGB*>& imgs) {
  if (imgs.empty()) throw ShapeError("stack_images: no images");
  const int h = imgs[0]->h, w = imgs[0]->w;
  Tensor<T> t(Shape{static_cast<int>(imgs.size()), 3, h, w});
  auto dst = t.data().begin();
  for (const ImageRGB* im : imgs) {
    if (im->h != h || im->w != w) throw ShapeError("stack_images: mixed sizes");
    dst = std::transform(im->data.begin(), im->data.end(), dst, [](double v) { return static_cast<T>(v); });
  }
  return t;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255).

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// One whitespace-delimited header token; '#' comments are skipped.
inline std::string ppm_token(const std::string& s, std::size_t& pos) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) throw FormatError("ppm header truncated");
  return s.substr(start, pos - start);
}

inline int ppm_int(const std::string& tok) {
  const bool digits =
      std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  if (tok.empty() || !digits || tok.size() > 9) {
    throw FormatError("ppm header field '" + tok + "' is not a positive integer");
  }
  return std::stoi(tok);
}

}  // namespace detail

inline ImageRGB decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (detail::ppm_token(bytes, pos) != "P6") throw FormatError("not a binary PPM (P6) file");
  const int w = detail::ppm_int(detail::ppm_token(bytes, pos));
  const int h = detail::ppm_int(detail::ppm_token(bytes, pos));
  const int maxval = detail::ppm_int(detail::ppm_token(bytes, pos));
  if (w < 1 || h < 1) throw FormatError("ppm dimensions must be positive");
  if (maxval != 255) throw FormatError("only maxval 255 is supported, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("ppm header not terminated");
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) throw FormatError("ppm payload truncated");
  ImageRGB img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const auto b = static_cast<unsigned char>(bytes[pos + (static_cast<std::size_t>(y) * w + x) * 3 + c]);
        img.at(c, y, x) = b / 255.0;
      }
  return img;
}

inline ImageRGB load_ppm(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }

inline std::string encode_ppm(const ImageRGB& img) {
  std::string out = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(img.w) * img.h * 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  return out;
}

inline void save_ppm(const ImageRGB& img, const std::filesystem::path& path) {
  const std::string bytes = encode_ppm(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Luma and PSNR

// BT.601 studio-range luma for RGB in [0, 1], Y in [16, 235].
inline Tensor<double> to_y(const ImageRGB& img) {
  Tensor<double> y(Shape{1, 1, img.h, img.w});
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      y.at(0, 0, r, c) = 16.0 + 65.481 * img.at(0, r, c) + 128.553 * img.at(1, r, c) + 24.966 * img.at(2, r, c);
  return y;
}

inline constexpr double kPsnrCap = 99.0;

// PSNR on Y after cropping `border` pixels from every side.
inline double psnr_y(const ImageRGB& a, const ImageRGB& b, int border) {
  if (a.h != b.h || a.w != b.w) {
    throw ShapeError("psnr_y: image sizes differ (" + std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                     std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
  }
  if (border < 0 || 2 * border >= a.h || 2 * border >= a.w) throw ShapeError("psnr_y: border crops the whole image");
  const auto ya = to_y(a);
  const auto yb = to_y(b);
  double se = 0.0;
  std::size_t n = 0;
  for (int r = border; r < a.h - border; ++r)
    for (int c = border; c < a.w - border; ++c) {
      const double d = ya.at(0, 0, r, c) - yb.at(0, 0, r, c);
      se += d * d;
      ++n;
    }
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// ---------------------------------------------------------------------------
// Degradation and augmentation

inline ImageRGB resize_image(const ImageRGB& img, int out_h, int out_w, bool antialias) {
  const Tensor<double> t(Shape{1, 3, img.h, img.w}, img.data);
  const Tensor<double> r = bicubic_resize(t, out_h, out_w, antialias);
  ImageRGB out(out_h, out_w);
  std::copy(r.data().begin(), r.data().end(), out.data.begin());
  out.clamp();
  return out;
}

// Antialiased bicubic downscale by an integer factor.
inline ImageRGB degrade_bicubic(const ImageRGB& hr, int scale) {
  if (scale < 1 || hr.h % scale != 0 || hr.w % scale != 0) {
    throw ShapeError("degrade_bicubic: " + std::to_string(hr.h) + "x" + std::to_string(hr.w) +
                     " not divisible by scale " + std::to_string(scale));
  }
  return resize_image(hr, hr.h / scale, hr.w / scale, true);
}

// Plain bicubic upscale, the baseline every SR model has to beat.
inline ImageRGB upscale_bicubic(const ImageRGB& lr, int scale) {
  return resize_image(lr, lr.h * scale, lr.w * scale, false);
}

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns

  static AugmentDraw sample(Rng& rng) {
    AugmentDraw d;
    d.hflip = rng.coin();
    d.vflip = rng.coin();
    d.rot90 = static_cast<int>(rng.below(4));
    return d;
  }
};

inline ImageRGB hflip(const ImageRGB& img) {
  ImageRGB o(img.h, img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) o.at(c, y, x) = img.at(c, y, img.w - 1 - x);
  return o;
}

inline ImageRGB vflip(const ImageRGB& img) {
  ImageRGB o(img.h, img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) o.at(c, y, x) = img.at(c, img.h - 1 - y, x);
  return o;
}

// One counter-clockwise quarter turn.
inline ImageRGB rot90(const ImageRGB& img) {
  ImageRGB o(img.w, img.h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < o.h; ++y)
      for (int x = 0; x < o.w; ++x) o.at(c, y, x) = img.at(c, x, img.w - 1 - y);
  return o;
}

inline ImageRGB apply_augment(ImageRGB img, const AugmentDraw& d) {
  if (d.hflip) img = hflip(img);
  if (d.vflip) img = vflip(img);
  for (int k = 0; k < d.rot90; ++k) img = rot90(img);
  return img;
}

inline ImageRGB augment(const ImageRGB& patch, Rng& rng) {
  if (patch.h != patch.w) throw ShapeError("augment expects a square patch");
  return apply_augment(patch, AugmentDraw::sample(rng));
}

inline ImageRGB crop(const ImageRGB& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.h || x0 + w > img.w) throw ShapeError("crop outside image");
  ImageRGB o(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) o.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return o;
}

// ---------------------------------------------------------------------------
// Procedural dataset for desk-scale runs

// Gradient background, a few oriented gratings, a few solid rectangles.
inline ImageRGB synth_image(Rng rng, int size) {
  ImageRGB img(size, size);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform();
    c1[c] = rng.uniform();
  }
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(ang), gy = std::sin(ang);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x - size / 2.0) * gx + (y - size / 2.0) * gy) / (0.75 * size);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = c0[c] + (c1[c] - c0[c]) * std::clamp(t, 0.0, 1.0);
    }

  const int waves = 1 + static_cast<int>(rng.below(3));
  for (int k = 0; k < waves; ++k) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(3.0, std::max(4.0, 0.5 * size));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(0.1, 0.35);
    double tint[3];
    for (double& t : tint) t = rng.uniform(-1.0, 1.0);
    const double fx = std::cos(theta) * 2.0 * std::numbers::pi / period;
    const double fy = std::sin(theta) * 2.0 * std::numbers::pi / period;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double s = amp * std::sin(fx * x + fy * y + phase);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += s * tint[c];
      }
  }

  const int rects = 2 + static_cast<int>(rng.below(4));
  const auto half = static_cast<std::uint64_t>(std::max(1, size / 2));
  for (int k = 0; k < rects; ++k) {
    const int rh = 2 + static_cast<int>(rng.below(half));
    const int rw = 2 + static_cast<int>(rng.below(half));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size)));
    double col[3];
    for (double& v : col) v = rng.uniform();
    for (int y = y0; y < std::min(size, y0 + rh); ++y)
      for (int x = x0; x < std::min(size, x0 + rw); ++x)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
  }
  img.clamp();
  return img;
}

inline std::vector<ImagePair> synth_dataset(std::uint64_t seed, int count, int hr_size, int scale) {
  if (scale < 1 || hr_size < scale || hr_size % scale != 0) {
    throw ShapeError("synth_dataset: hr_size must be a positive multiple of scale");
  }
  std::vector<ImagePair> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  const Rng root(seed);
  for (int i = 0; i < count; ++i) {
    ImageRGB hr = synth_image(root.split(static_cast<std::uint64_t>(i)), hr_size);
    ImageRGB lr = degrade_bicubic(hr, scale);
    out.push_back({std::move(lr), std::move(hr)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directories: <root>/hr/*.ppm with an optional <root>/lr/*.ppm of
// the same names. Missing LR images are degraded from HR and cached in lr/.

inline std::vector<ImagePair> load_dataset_dir(const std::filesystem::path& root, int scale) {
  namespace fs = std::filesystem;
  const fs::path hr_dir = root / "hr";
  if (!fs::is_directory(hr_dir)) throw FormatError("dataset has no hr/ directory: " + hr_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(hr_dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no .ppm images in " + hr_dir.string());
  const fs::path lr_dir = root / "lr";
  std::vector<ImagePair> out;
  for (const auto& f : files) {
    ImagePair p;
    p.hr = load_ppm(f);
    const fs::path lr_file = lr_dir / f.filename();
    if (fs::exists(lr_file)) {
      p.lr = load_ppm(lr_file);
      if (p.lr.h * scale != p.hr.h || p.lr.w * scale != p.hr.w) {
        throw FormatError("lr image " + lr_file.string() + " does not match its hr size at scale " +
                          std::to_string(scale));
      }
    } else {
      p.lr = degrade_bicubic(p.hr, scale);
      fs::create_directories(lr_dir);
      save_ppm(p.lr, lr_file);
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_dataset_dir(const std::vector<ImagePair>& pairs, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "hr");
  fs::create_directories(root / "lr");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu.ppm", i);
    save_ppm(pairs[i].hr, root / "hr" / name);
    save_ppm(pairs[i].lr, root / "lr" / name);
  }
}

}  // namespace mfa

#endif  // MFA_DATAIO_HPP_
