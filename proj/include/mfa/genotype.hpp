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

#ifndef MFA_GENOTYPE_HPP_
#define MFA_GENOTYPE_HPP_

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mfa/error.hpp"

namespace mfa {

inline constexpr int kGeneCount = 8;

// Channel widths at the eight decision points of the generator:
// [coarse, MFAM1 internal, MFAM1 out, MFAM2 internal, MFAM2 out,
//  MFAM3 internal, MFAM3 out, smoothing].
class Genotype {
 public:
  Genotype() = default;

  explicit Genotype(std::array<int, kGeneCount> genes) : genes_(genes) {
    for (int g : genes_) {
      if (g < 1) throw GenotypeError("genotype widths must be positive, got " + std::to_string(g));
    }
  }

  explicit Genotype(const std::vector<int>& genes) {
    if (genes.size() != kGeneCount) {
      throw GenotypeError("genotype needs exactly 8 genes, got " + std::to_string(genes.size()));
    }
    std::array<int, kGeneCount> a{};
    std::copy(genes.begin(), genes.end(), a.begin());
    *this = Genotype(a);
  }

  static Genotype uniform(int width) {
    std::array<int, kGeneCount> a{};
    a.fill(width);
    return Genotype(a);
  }

  // Parses "48,32,24,..." (whitespace tolerated).
  static Genotype parse(const std::string& text) {
    std::vector<int> genes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        genes.push_back(std::stoi(item, &used));
        if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw GenotypeError("cannot parse genotype '" + text + "'");
      }
    }
    return Genotype(genes);
  }

  int operator[](std::size_t i) const { return genes_[i]; }
  const std::array<int, kGeneCount>& genes() const noexcept { return genes_; }

  int coarse() const { return genes_[0]; }
  int mfam_internal(int m) const { return genes_[1 + 2 * m]; }
  int mfam_output(int m) const { return genes_[2 + 2 * m]; }
  int smoothing() const { return genes_[7]; }

  // Elementwise <=.
  bool fits_within(const Genotype& other) const {
    for (int i = 0; i < kGeneCount; ++i)
      if (genes_[i] > other.genes_[i]) return false;
    return true;
  }

  std::string str() const {
    std::string s;
    for (int i = 0; i < kGeneCount; ++i) s += (i ? "," : "") + std::to_string(genes_[i]);
    return s;
  }

  auto operator<=>(const Genotype&) const = default;

 private:
  std::array<int, kGeneCount> genes_{48, 48, 48, 48, 48, 48, 48, 48};
};

// The per-gene choice set. The default is {48, 32, 24}; desk-scale runs use
// a proportionally scaled set such as {12, 8, 6}.
struct GeneSpace {
  std::array<int, 3> choices{48, 32, 24};

  static constexpr std::size_t size() { return 6561; }  // 3^8

  int max_width() const { return *std::max_element(choices.begin(), choices.end()); }
  int min_width() const { return *std::min_element(choices.begin(), choices.end()); }

  bool contains(int width) const { return std::find(choices.begin(), choices.end(), width) != choices.end(); }

  bool contains(const Genotype& g) const {
    return std::all_of(g.genes().begin(), g.genes().end(), [&](int w) { return contains(w); });
  }

  void check(const Genotype& g) const {
    if (!contains(g)) {
      throw GenotypeError("genotype " + g.str() + " has a gene outside {" + std::to_string(choices[0]) + "," +
                          std::to_string(choices[1]) + "," + std::to_string(choices[2]) + "}");
    }
  }

  Genotype max_genotype() const { return Genotype::uniform(max_width()); }
  Genotype min_genotype() const { return Genotype::uniform(min_width()); }

  // Mixed-radix decoding; gene 0 is the most significant digit.
  Genotype at(std::size_t index) const {
    if (index >= size()) throw GenotypeError("genotype index out of range");
    std::array<int, kGeneCount> g{};
    for (int i = kGeneCount - 1; i >= 0; --i) {
      g[i] = choices[index % 3];
      index /= 3;
    }
    return Genotype(g);
  }

  std::vector<Genotype> enumerate() const {
    std::vector<Genotype> all;
    all.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) all.push_back(at(i));
    return all;
  }

  // Next smaller choice, or the same width if already minimal.
  int step_down(int width) const {
    int best = width;
    for (int c : choices)
      if (c < width && (best == width || c > best)) best = c;
    return best;
  }
};

}  // namespace mfa

#endif  // MFA_GENOTYPE_HPP_
