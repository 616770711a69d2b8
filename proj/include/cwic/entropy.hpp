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

// Context-adaptive binary arithmetic coding of trimmed codes and of the
// quantized importance map.
//
// Coding schedule: channel by channel (k = 1..n), row-major within a
// channel, skipping masked-out bits. Each bit is predicted from a 5x5x4
// context cuboid covering the 5x5 window around it in the current channel
// and the three channels before it. Cuboid entries are ternary:
//   0  unavailable (the bit itself, out of bounds, masked out, or not yet
//      coded)
//   1  available, value 0
//   2  available, value 1

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cwic/quant.hpp"

namespace cwic {

inline constexpr int kContextMaps = 4;
inline constexpr int kContextSide = 5;
inline constexpr int kContextLength = kContextMaps * kContextSide * kContextSide;

// Entry (m, dy, dx) lives at (m * 5 + dy) * 5 + dx. Map m = 3 is the
// current channel, m = 0 the channel three before it; (dy, dx) = (2, 2) is
// the bit being predicted.
using ContextCuboid = std::array<std::uint8_t, kContextLength>;

constexpr int CuboidIndex(int m, int dy, int dx) {
  return (m * kContextSide + dy) * kContextSide + dx;
}

struct Position {
  int k;  // zero-based channel
  int i;
  int j;
  friend bool operator==(const Position&, const Position&) = default;
};

std::vector<Position> Schedule(const BitVolume& mask);

// Context of the bit at (k, i, j) given the bits coded so far. Positions
// later in the schedule are never read, so `bits` may be a partially
// decoded volume.
ContextCuboid ExtractContext(const BitVolume& bits, const BitVolume& mask,
                             int k, int i, int j);

// Probabilities handed to the coder are clamped to this range.
inline constexpr double kMinProbability = 1e-4;
inline constexpr double kMaxProbability = 1.0 - 1e-4;
double ClampProbability(double p);

// ---------------------------------------------------------------------------
// Probability models

// One-hot cuboid (300 inputs) -> 128 -> 64 -> 1, ReLU, ReLU, sigmoid.
class ContextNet {
 public:
  static constexpr int kInputs = 3 * kContextLength;
  static constexpr int kHidden1 = 128;
  static constexpr int kHidden2 = 64;

  ContextNet();
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static ContextNet Random(std::uint64_t seed);

  // Unclamped P(bit = 1).
  double Predict(const ContextCuboid& cuboid) const;

  // Arrays in file order: w1 [300x128], b1, w2 [128x64], b2, w3 [64], b3.
  std::vector<std::span<double>> Arrays();
  std::vector<std::span<const double>> Arrays() const;

  friend bool operator==(const ContextNet&, const ContextNet&) = default;

 private:
  friend class ContextNetTrainer;
  std::vector<double> w1_, b1_, w2_, b2_, w3_, b3_;
};

// Adaptive Laplace-smoothed counts keyed by the five nearest coded bits:
// left, up-left, up, up-right in the current channel, and the same
// position in the previous channel.
class FrequencyTable {
 public:
  static constexpr int kContexts = 243;

  FrequencyTable();

  static int ContextIndex(const ContextCuboid& cuboid);

  // (ones + 1) / (ones + zeros + 2) for the cuboid's context.
  double Predict(const ContextCuboid& cuboid) const;
  void Update(const ContextCuboid& cuboid, int bit);

  std::array<std::uint32_t, 2>& counts(int context) { return counts_[context]; }
  const std::array<std::uint32_t, 2>& counts(int context) const {
    return counts_[context];
  }

  friend bool operator==(const FrequencyTable&, const FrequencyTable&) = default;

 private:
  std::vector<std::array<std::uint32_t, 2>> counts_;  // {zeros, ones}
};

enum class EntropyModelKind : std::uint8_t { kNet = 0, kFrequencyTable = 1 };

// Which payload a prediction is for; each has its own predictor.
enum class Payload { kCodes, kImportance };

struct EntropyModel {
  EntropyModelKind kind = EntropyModelKind::kNet;
  ContextNet code_net;
  ContextNet importance_net;
  FrequencyTable code_table;  // initial counts for adaptive coding
  FrequencyTable importance_table;

  static EntropyModel Net(ContextNet codes, ContextNet importance);
  static EntropyModel Frequency(FrequencyTable codes = {},
                                FrequencyTable importance = {});

  std::uint32_t Checksum() const;

  friend bool operator==(const EntropyModel&, const EntropyModel&) = default;
};

// Clamped P(bit = 1) under the model's initial state.
double Predict(const EntropyModel& model, const ContextCuboid& cuboid,
               Payload payload = Payload::kCodes);

// Per-stream predictor; frequency tables adapt as bits are coded. Encoder
// and decoder drive identical sequences of Predict/Update calls.
class AdaptiveModel {
 public:
  AdaptiveModel(const EntropyModel& model, Payload payload);
  double Predict(const ContextCuboid& cuboid) const;
  void Update(const ContextCuboid& cuboid, int bit);

 private:
  const ContextNet* net_ = nullptr;
  FrequencyTable table_;
};

std::vector<std::uint8_t> SerializeEntropyModel(const EntropyModel& model);
EntropyModel DeserializeEntropyModel(std::span<const std::uint8_t> bytes);
void SaveEntropyModel(const EntropyModel& model, const std::string& path);
EntropyModel LoadEntropyModel(const std::string& path);

// ---------------------------------------------------------------------------
// Binary arithmetic coder: 32-bit low/high registers with pending-bit carry
// handling. Probabilities are quantized to 16 bits.

class ArithmeticEncoder {
 public:
  // Codes `bit` where P(bit = 1) = p1.
  void Encode(int bit, double p1);
  std::vector<std::uint8_t> Finish();

 private:
  void PutBit(int bit);
  void PutBitWithPending(int bit);

  std::uint32_t low_ = 0;
  std::uint32_t high_ = 0xFFFFFFFFu;
  std::uint64_t pending_ = 0;
  std::vector<std::uint8_t> out_;
  std::uint8_t current_ = 0;
  int filled_ = 0;
};

class ArithmeticDecoder {
 public:
  explicit ArithmeticDecoder(std::span<const std::uint8_t> data);
  int Decode(double p1);
  // Bytes of input consumed so far, including the look-ahead register.
  std::size_t consumed_bytes() const { return (bit_pos_ + 7) / 8; }

 private:
  int NextBit();

  std::span<const std::uint8_t> data_;
  std::size_t bit_pos_ = 0;
  std::uint32_t low_ = 0;
  std::uint32_t high_ = 0xFFFFFFFFu;
  std::uint32_t value_ = 0;
};

std::vector<std::uint8_t> AcEncode(std::span<const std::uint8_t> bits,
                                   std::span<const double> probs);
// `prob(index)` supplies P(bit = 1) for the index-th bit.
std::vector<std::uint8_t> AcDecode(
    std::span<const std::uint8_t> bytes,
    const std::function<double(std::size_t)>& prob, std::size_t count);

// ---------------------------------------------------------------------------
// Payload coding

std::vector<std::uint8_t> EncodeCodes(const BitVolume& codes,
                                      const BitVolume& mask,
                                      const EntropyModel& model);
// Masked-out positions are zero in the result.
BitVolume DecodeCodes(std::span<const std::uint8_t> bytes,
                      const BitVolume& mask, const EntropyModel& model);

// Smallest n_b with 2^(n_b-1) < L <= 2^n_b.
int BitplaneCount(int L);
// Plane b holds bit b of each level (least significant plane first).
BitVolume BinarizeImportance(const ImportanceMap& imp_q, int L);
ImportanceMap DebinarizeImportance(const BitVolume& planes);

std::vector<std::uint8_t> EncodeImportance(const ImportanceMap& imp_q, int L,
                                           const EntropyModel& model);
ImportanceMap DecodeImportance(std::span<const std::uint8_t> bytes,
                               const EntropyModel& model, std::size_t height,
                               std::size_t width, int L);

// Uncompressed packing (MSB first), used as the per-payload fallback.
std::vector<std::uint8_t> PackBits(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> UnpackBits(std::span<const std::uint8_t> bytes,
                                     std::size_t count);
std::vector<std::uint8_t> PackScheduled(const BitVolume& bits,
                                        const BitVolume& mask);
BitVolume UnpackScheduled(std::span<const std::uint8_t> bytes,
                          const BitVolume& mask);

// ---------------------------------------------------------------------------
// Learning the context net

struct ContextSample {
  ContextCuboid cuboid;
  std::uint8_t bit;
  std::uint8_t mask;  // loss weight; 0 removes the sample
};

std::vector<ContextSample> HarvestCodeContexts(const BitVolume& codes,
                                               const BitVolume& mask);
std::vector<ContextSample> HarvestImportanceContexts(const ImportanceMap& imp_q,
                                                     int L);

// Masked negative log-likelihood in bits per masked bit, using clamped
// probabilities (what the coder pays).
double MaskedNllBits(const ContextNet& net,
                     std::span<const ContextSample> corpus);

struct EntropyTrainConfig {
  std::vector<double> lr_ladder{1e-4, 1e-5, 1e-6};
  std::size_t steps_per_stage = 2000;
  std::size_t batch_size = 64;
  std::size_t plateau_window = 50;
  std::size_t plateau_patience = 3;
  std::uint64_t seed = 1;
};

// Minimizes the masked cross-entropy with ADAM over the learning-rate
// ladder. Rejects an empty corpus.
ContextNet TrainContextNet(ContextNet init,
                           std::span<const ContextSample> corpus,
                           const EntropyTrainConfig& config);

// Initial counts accumulated over a corpus.
FrequencyTable FitFrequencyTable(std::span<const ContextSample> corpus);

}  // namespace cwic
