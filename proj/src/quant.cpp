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

#include "cwic/quant.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cwic/error.hpp"

namespace cwic {

namespace {

// Bin search over the L levels; p is assumed finite. Values at or beyond
// the open interval's ends land in the first or last bin (sigmoid can round
// to exactly 0 or 1 in double precision).
int QuantizeClamped(double p, int L) {
  if (!(p > 0.0)) return 0;
  if (p >= 1.0) return L - 1;
  int q = std::clamp(static_cast<int>(std::floor(p * L)), 0, L - 1);
  while (q > 0 && p < static_cast<double>(q) / L) --q;
  while (q + 1 < L && p >= static_cast<double>(q + 1) / L) ++q;
  return q;
}

void CheckLevels(int n, int L) {
  if (L <= 0 || n <= 0 || n % L != 0) {
    throw InvalidArgument("mask: n=" + std::to_string(n) +
                          " must be a positive multiple of L=" +
                          std::to_string(L));
  }
}

}  // namespace

std::size_t BitVolume::Count() const {
  return static_cast<std::size_t>(
      std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

long ImportanceMap::Sum() const {
  return std::accumulate(levels.begin(), levels.end(), 0L);
}

Var Binarize(Var e) {
  return CustomUnit(BinarizeValue, BinarizeProxyGradient, e);
}

int QuantizeImportance(double p, int L) {
  if (L <= 0) throw InvalidArgument("quantize: L must be positive");
  if (!(p > 0.0 && p < 1.0)) {
    throw InvalidArgument("quantize: importance " + std::to_string(p) +
                          " outside (0,1)");
  }
  return QuantizeClamped(p, L);
}

BitVolume BuildMask(const ImportanceMap& imp_q, int n, int L) {
  CheckLevels(n, L);
  const int per_level = n / L;
  BitVolume mask(static_cast<std::size_t>(n), imp_q.height, imp_q.width);
  for (std::size_t i = 0; i < imp_q.height; ++i) {
    for (std::size_t j = 0; j < imp_q.width; ++j) {
      const int q = imp_q.at(i, j);
      if (q < 0 || q >= L) {
        throw InvalidArgument("mask: importance level " + std::to_string(q) +
                              " outside [0," + std::to_string(L - 1) + "]");
      }
      const int depth = per_level * q;
      for (int k = 1; k <= depth; ++k) {
        mask.at(static_cast<std::size_t>(k - 1), i, j) = 1;
      }
    }
  }
  return mask;
}

double MaskBackward(double p, int k, int n, int L) {
  const int c = (k * L + n - 1) / n;  // ceil(kL/n)
  const double lp = L * p;
  return (lp - 1.0 <= c && c < lp + 2.0) ? static_cast<double>(L) : 0.0;
}

Var ImportanceMask(Var p, int n, int L) {
  CheckLevels(n, L);
  const Tensor& pv = p.value();
  if (pv.rank() != 4 || pv.dim(1) != 1) {
    throw InvalidArgument("mask: expected [N,1,h,w] importance, got " +
                          ShapeString(pv.shape()));
  }
  const std::size_t batch = pv.dim(0), h = pv.dim(2), w = pv.dim(3);
  const int per_level = n / L;
  Tensor out({batch, static_cast<std::size_t>(n), h, w});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const int depth = per_level * QuantizeClamped(pv.at(b, 0, i, j), L);
        for (int k = 0; k < depth; ++k) {
          out.at(b, static_cast<std::size_t>(k), i, j) = 1.0;
        }
      }
    }
  }
  return p.tape()->Record(
      std::move(out), {p}, [p, n, L](Tape& t, const Tensor& dm) {
        const Tensor& pv = p.value();
        Tensor& dp = t.GradBuffer(p);
        const std::size_t batch = pv.dim(0), h = pv.dim(2), w = pv.dim(3);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const double pij = pv.at(b, 0, i, j);
              double acc = 0.0;
              for (int k = 1; k <= n; ++k) {
                const double d = MaskBackward(pij, k, n, L);
                if (d != 0.0) {
                  acc += d * dm.at(b, static_cast<std::size_t>(k - 1), i, j);
                }
              }
              dp.at(b, 0, i, j) += acc;
            }
          }
        }
      });
}

BitVolume Trim(const BitVolume& codes, const BitVolume& mask) {
  if (codes.channels() != mask.channels() || codes.height() != mask.height() ||
      codes.width() != mask.width()) {
    throw InvalidArgument("trim: code and mask shapes differ");
  }
  BitVolume out = codes;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.bits()[i] = codes.bits()[i] & mask.bits()[i];
  }
  return out;
}

CodeBundle MakeBundle(const Tensor& e, const Tensor& p, int L,
                      bool importance_enabled, std::size_t index) {
  if (e.rank() != 4 || index >= e.dim(0)) {
    throw InvalidArgument("bundle: bad code tensor " + ShapeString(e.shape()));
  }
  const std::size_t n = e.dim(1), h = e.dim(2), w = e.dim(3);
  CodeBundle bundle;
  bundle.n = static_cast<int>(n);
  bundle.L = L;
  if (importance_enabled) {
    bundle.imp_q.height = h;
    bundle.imp_q.width = w;
    bundle.imp_q.levels.assign(h * w, 0);
    if (p.rank() != 4 || p.dim(1) != 1 || p.dim(2) != h || p.dim(3) != w ||
        index >= p.dim(0)) {
      throw InvalidArgument("bundle: importance shape " +
                            ShapeString(p.shape()) + " does not match code " +
                            ShapeString(e.shape()));
    }
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        bundle.imp_q.at(i, j) = QuantizeClamped(p.at(index, 0, i, j), L);
      }
    }
    bundle.mask = BuildMask(bundle.imp_q, bundle.n, L);
  } else {
    bundle.mask = BitVolume(n, h, w, 1);
  }
  BitVolume codes(n, h, w);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        codes.at(k, i, j) =
            static_cast<std::uint8_t>(BinarizeValue(e.at(index, k, i, j)));
      }
    }
  }
  bundle.codes = Trim(codes, bundle.mask);
  return bundle;
}

Tensor CodesToTensor(const BitVolume& codes) {
  Tensor t({1, codes.channels(), codes.height(), codes.width()});
  for (std::size_t i = 0; i < codes.size(); ++i) t[i] = codes.bits()[i];
  return t;
}

}  // namespace cwic
