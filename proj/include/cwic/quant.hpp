// Copyright (c) the cwic authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binarizer, importance-map quantizer, channel mask and code trimming, both
// as plain functions on bit volumes and as differentiable tape operations
// with straight-through gradients.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cwic/tensor.hpp"

namespace cwic {

// Binary array indexed (channel, row, col). Channel index 0 corresponds to
// k = 1 in the one-based mask formula.
class BitVolume {
 public:
  BitVolume() = default;
  BitVolume(std::size_t channels, std::size_t height, std::size_t width,
            std::uint8_t fill = 0)
      : channels_(channels),
        height_(height),
        width_(width),
        bits_(channels * height * width, fill) {}

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  std::uint8_t& at(std::size_t k, std::size_t i, std::size_t j) {
    return bits_[(k * height_ + i) * width_ + j];
  }
  std::uint8_t at(std::size_t k, std::size_t i, std::size_t j) const {
    return bits_[(k * height_ + i) * width_ + j];
  }
  std::size_t Count() const;

  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::vector<std::uint8_t>& bits() { return bits_; }

  friend bool operator==(const BitVolume&, const BitVolume&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Quantized importance map, values in {0, ..., L-1}.
struct ImportanceMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> levels;

  int at(std::size_t i, std::size_t j) const { return levels[i * width + j]; }
  int& at(std::size_t i, std::size_t j) { return levels[i * width + j]; }
  long Sum() const;

  friend bool operator==(const ImportanceMap&, const ImportanceMap&) = default;
};

// Everything transmitted for one image.
struct CodeBundle {
  int n = 0;
  int L = 0;
  BitVolume codes;  // trimmed binary codes, n x h x w
  ImportanceMap imp_q;
  BitVolume mask;  // n x h x w

  friend bool operator==(const CodeBundle&, const CodeBundle&) = default;
};

// 1 iff e > 0.5.
inline double BinarizeValue(double e) { return e > 0.5 ? 1.0 : 0.0; }
// Derivative of the linear proxy: 1 on [0,1], 0 elsewhere.
inline double BinarizeProxyGradient(double e) {
  return (e >= 0.0 && e <= 1.0) ? 1.0 : 0.0;
}

// Forward: hard threshold. Backward: upstream gradient passed through
// where 0 <= e <= 1.
Var Binarize(Var e);

// l-1 such that (l-1)/L <= p < l/L. Rejects p outside (0,1).
int QuantizeImportance(double p, int L);

// mask(k,i,j) = 1 iff k <= (n/L) * imp_q(i,j), k one-based.
BitVolume BuildMask(const ImportanceMap& imp_q, int n, int L);

// Straight-through derivative of mask(k,i,j) with respect to p(i,j):
// L if L*p - 1 <= ceil(k*L/n) < L*p + 2, else 0. k is one-based.
double MaskBackward(double p, int k, int n, int L);

// Differentiable mask over a batch of importance maps p [N,1,h,w]:
// forward quantizes and expands to [N,n,h,w]; backward sums MaskBackward
// over k at each location.
Var ImportanceMask(Var p, int n, int L);

BitVolume Trim(const BitVolume& codes, const BitVolume& mask);

// Builds the bundle for image `index` of a batch: e [N,n,h,w] and p
// [N,1,h,w]. With `importance_enabled` false, imp_q is empty and the mask
// keeps every bit.
CodeBundle MakeBundle(const Tensor& e, const Tensor& p, int L,
                      bool importance_enabled, std::size_t index = 0);

// Dequantized decoder input [1,n,h,w] from trimmed codes.
Tensor CodesToTensor(const BitVolume& codes);

}  // namespace cwic
