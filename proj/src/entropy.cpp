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

#include "cwic/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cwic/bytes.hpp"
#include "cwic/error.hpp"
#include "cwic/optim.hpp"
#include "cwic/random.hpp"

namespace cwic {

namespace {

constexpr char kEntropyMagic[] = "CWEN";
constexpr std::uint8_t kEntropyVersion = 1;

constexpr std::uint32_t kHalf = 0x80000000u;
constexpr std::uint32_t kQuarter = 0x40000000u;
constexpr std::uint32_t kThreeQuarters = 0xC0000000u;
constexpr int kProbabilityBits = 16;
// Look-ahead the decoder may legitimately read past the end of the data.
constexpr std::size_t kMaxOverrunBits = 32;

// P(bit = 1) in units of 2^-16, kept strictly inside (0, 1).
std::uint32_t QuantizeProbability(double p1) {
  const double scaled = std::round(p1 * (1 << kProbabilityBits));
  return static_cast<std::uint32_t>(
      std::clamp(scaled, 1.0, static_cast<double>((1 << kProbabilityBits) - 1)));
}

std::uint32_t Split(std::uint32_t low, std::uint32_t high, double p1) {
  const std::uint64_t range = static_cast<std::uint64_t>(high) - low + 1;
  return low + static_cast<std::uint32_t>(
                   (range * QuantizeProbability(p1)) >> kProbabilityBits) -
         1;
}

double StableSigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void UniformFill(std::vector<double>& w, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  for (double& v : w) v = static_cast<float>(rng.Uniform(-bound, bound));
}

// Activations of one forward pass, kept for backprop.
struct NetActivations {
  std::array<double, ContextNet::kHidden1> h1;
  std::array<double, ContextNet::kHidden2> h2;
  double logit;
};

}  // namespace

// ---------------------------------------------------------------------------
// Schedule and contexts

std::vector<Position> Schedule(const BitVolume& mask) {
  std::vector<Position> order;
  order.reserve(mask.Count());
  for (std::size_t k = 0; k < mask.channels(); ++k) {
    for (std::size_t i = 0; i < mask.height(); ++i) {
      for (std::size_t j = 0; j < mask.width(); ++j) {
        if (mask.at(k, i, j)) {
          order.push_back({static_cast<int>(k), static_cast<int>(i),
                           static_cast<int>(j)});
        }
      }
    }
  }
  return order;
}

ContextCuboid ExtractContext(const BitVolume& bits, const BitVolume& mask,
                             int k, int i, int j) {
  ContextCuboid cuboid{};
  const int h = static_cast<int>(mask.height());
  const int w = static_cast<int>(mask.width());
  constexpr int kRadius = kContextSide / 2;
  for (int m = 0; m < kContextMaps; ++m) {
    const int kk = k - (kContextMaps - 1) + m;
    if (kk < 0) continue;
    for (int dy = 0; dy < kContextSide; ++dy) {
      const int ii = i + dy - kRadius;
      if (ii < 0 || ii >= h) continue;
      for (int dx = 0; dx < kContextSide; ++dx) {
        const int jj = j + dx - kRadius;
        if (jj < 0 || jj >= w) continue;
        // Coded strictly before (k, i, j) in channel-major, row-major order.
        const bool earlier =
            kk < k || (kk == k && (ii < i || (ii == i && jj < j)));
        if (!earlier) continue;
        const auto uk = static_cast<std::size_t>(kk);
        const auto ui = static_cast<std::size_t>(ii);
        const auto uj = static_cast<std::size_t>(jj);
        if (!mask.at(uk, ui, uj)) continue;
        cuboid[CuboidIndex(m, dy, dx)] =
            static_cast<std::uint8_t>(1 + bits.at(uk, ui, uj));
      }
    }
  }
  return cuboid;
}

double ClampProbability(double p) {
  return std::clamp(p, kMinProbability, kMaxProbability);
}

// ---------------------------------------------------------------------------
// ContextNet

ContextNet::ContextNet()
    : w1_(static_cast<std::size_t>(kInputs) * kHidden1, 0.0),
      b1_(kHidden1, 0.0),
      w2_(static_cast<std::size_t>(kHidden1) * kHidden2, 0.0),
      b2_(kHidden2, 0.0),
      w3_(kHidden2, 0.0),
      b3_(1, 0.0) {}

ContextNet ContextNet::Random(std::uint64_t seed) {
  ContextNet net;
  Rng rng(seed);
  // A one-hot input has kContextLength active units.
  UniformFill(net.w1_, kContextLength, rng);
  UniformFill(net.w2_, kHidden1, rng);
  UniformFill(net.w3_, kHidden2, rng);
  return net;
}

namespace {

void Forward(const std::vector<double>& w1, const std::vector<double>& b1,
             const std::vector<double>& w2, const std::vector<double>& b2,
             const std::vector<double>& w3, const std::vector<double>& b3,
             const ContextCuboid& cuboid, NetActivations& act) {
  constexpr int H1 = ContextNet::kHidden1;
  constexpr int H2 = ContextNet::kHidden2;
  std::copy(b1.begin(), b1.end(), act.h1.begin());
  for (int pos = 0; pos < kContextLength; ++pos) {
    const double* row =
        w1.data() + static_cast<std::size_t>(3 * pos + cuboid[pos]) * H1;
    for (int u = 0; u < H1; ++u) act.h1[u] += row[u];
  }
  for (double& v : act.h1) v = v > 0 ? v : 0.0;
  std::copy(b2.begin(), b2.end(), act.h2.begin());
  for (int u = 0; u < H1; ++u) {
    const double a = act.h1[u];
    if (a == 0.0) continue;
    const double* row = w2.data() + static_cast<std::size_t>(u) * H2;
    for (int o = 0; o < H2; ++o) act.h2[o] += a * row[o];
  }
  double z = b3[0];
  for (int o = 0; o < H2; ++o) {
    act.h2[o] = act.h2[o] > 0 ? act.h2[o] : 0.0;
    z += act.h2[o] * w3[o];
  }
  act.logit = z;
}

}  // namespace

double ContextNet::Predict(const ContextCuboid& cuboid) const {
  NetActivations act;
  Forward(w1_, b1_, w2_, b2_, w3_, b3_, cuboid, act);
  return StableSigmoid(act.logit);
}

std::vector<std::span<double>> ContextNet::Arrays() {
  return {w1_, b1_, w2_, b2_, w3_, b3_};
}

std::vector<std::span<const double>> ContextNet::Arrays() const {
  return {w1_, b1_, w2_, b2_, w3_, b3_};
}

// ---------------------------------------------------------------------------
// FrequencyTable

FrequencyTable::FrequencyTable() : counts_(kContexts, {0u, 0u}) {}

int FrequencyTable::ContextIndex(const ContextCuboid& c) {
  constexpr int kCur = kContextMaps - 1;
  const int neighbours[5] = {
      c[CuboidIndex(kCur, 2, 1)], c[CuboidIndex(kCur, 1, 1)],
      c[CuboidIndex(kCur, 1, 2)], c[CuboidIndex(kCur, 1, 3)],
      c[CuboidIndex(kCur - 1, 2, 2)]};
  int index = 0;
  for (int s : neighbours) index = index * 3 + s;
  return index;
}

double FrequencyTable::Predict(const ContextCuboid& cuboid) const {
  const auto& c = counts_[ContextIndex(cuboid)];
  return (static_cast<double>(c[1]) + 1.0) /
         (static_cast<double>(c[0]) + static_cast<double>(c[1]) + 2.0);
}

void FrequencyTable::Update(const ContextCuboid& cuboid, int bit) {
  auto& c = counts_[ContextIndex(cuboid)];
  auto& slot = c[bit ? 1 : 0];
  if (slot == UINT32_MAX) {
    c[0] = (c[0] + 1) / 2;
    c[1] = (c[1] + 1) / 2;
  }
  ++slot;
}

// ---------------------------------------------------------------------------
// EntropyModel

EntropyModel EntropyModel::Net(ContextNet codes, ContextNet importance) {
  EntropyModel m;
  m.kind = EntropyModelKind::kNet;
  m.code_net = std::move(codes);
  m.importance_net = std::move(importance);
  return m;
}

EntropyModel EntropyModel::Frequency(FrequencyTable codes,
                                     FrequencyTable importance) {
  EntropyModel m;
  m.kind = EntropyModelKind::kFrequencyTable;
  m.code_table = std::move(codes);
  m.importance_table = std::move(importance);
  return m;
}

std::uint32_t EntropyModel::Checksum() const {
  return Crc32(SerializeEntropyModel(*this));
}

double Predict(const EntropyModel& model, const ContextCuboid& cuboid,
               Payload payload) {
  return AdaptiveModel(model, payload).Predict(cuboid);
}

AdaptiveModel::AdaptiveModel(const EntropyModel& model, Payload payload) {
  if (model.kind == EntropyModelKind::kNet) {
    net_ = payload == Payload::kCodes ? &model.code_net : &model.importance_net;
  } else {
    table_ = payload == Payload::kCodes ? model.code_table
                                        : model.importance_table;
  }
}

double AdaptiveModel::Predict(const ContextCuboid& cuboid) const {
  return ClampProbability(net_ ? net_->Predict(cuboid)
                               : table_.Predict(cuboid));
}

void AdaptiveModel::Update(const ContextCuboid& cuboid, int bit) {
  if (!net_) table_.Update(cuboid, bit);
}

std::vector<std::uint8_t> SerializeEntropyModel(const EntropyModel& model) {
  ByteWriter out;
  out.Magic(std::string_view(kEntropyMagic, 4));
  out.U8(kEntropyVersion);
  out.U8(static_cast<std::uint8_t>(model.kind));
  if (model.kind == EntropyModelKind::kNet) {
    for (const ContextNet* net : {&model.code_net, &model.importance_net}) {
      for (auto array : net->Arrays()) {
        for (double v : array) out.F32(static_cast<float>(v));
      }
    }
  } else {
    for (const FrequencyTable* t : {&model.code_table, &model.importance_table}) {
      for (int c = 0; c < FrequencyTable::kContexts; ++c) {
        out.U32(t->counts(c)[0]);
        out.U32(t->counts(c)[1]);
      }
    }
  }
  return out.Take();
}

EntropyModel DeserializeEntropyModel(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "entropy model file");
  in.ExpectMagic(std::string_view(kEntropyMagic, 4));
  const std::uint8_t version = in.U8();
  if (version != kEntropyVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion,
                      "entropy model file: version " + std::to_string(version) +
                          " at offset 4");
  }
  const std::uint8_t kind = in.U8();
  EntropyModel model;
  if (kind == static_cast<std::uint8_t>(EntropyModelKind::kNet)) {
    model.kind = EntropyModelKind::kNet;
    for (ContextNet* net : {&model.code_net, &model.importance_net}) {
      for (auto array : net->Arrays()) {
        for (double& v : array) v = in.F32();
      }
    }
  } else if (kind == static_cast<std::uint8_t>(EntropyModelKind::kFrequencyTable)) {
    model.kind = EntropyModelKind::kFrequencyTable;
    for (FrequencyTable* t : {&model.code_table, &model.importance_table}) {
      for (int c = 0; c < FrequencyTable::kContexts; ++c) {
        t->counts(c)[0] = in.U32();
        t->counts(c)[1] = in.U32();
      }
    }
  } else {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "entropy model file: unknown model kind " +
                          std::to_string(kind) + " at offset 5");
  }
  if (in.remaining() != 0) {
    throw FormatError(FormatErrorKind::kTrailingData,
                      "entropy model file: " + std::to_string(in.remaining()) +
                          " unexpected bytes at offset " +
                          std::to_string(in.offset()));
  }
  return model;
}

void SaveEntropyModel(const EntropyModel& model, const std::string& path) {
  WriteFileBytes(path, SerializeEntropyModel(model));
}

EntropyModel LoadEntropyModel(const std::string& path) {
  return DeserializeEntropyModel(ReadFileBytes(path));
}

// ---------------------------------------------------------------------------
// Arithmetic coder

void ArithmeticEncoder::PutBit(int bit) {
  current_ = static_cast<std::uint8_t>((current_ << 1) | (bit & 1));
  if (++filled_ == 8) {
    out_.push_back(current_);
    current_ = 0;
    filled_ = 0;
  }
}

void ArithmeticEncoder::PutBitWithPending(int bit) {
  PutBit(bit);
  for (; pending_ > 0; --pending_) PutBit(!bit);
}

void ArithmeticEncoder::Encode(int bit, double p1) {
  const std::uint32_t split = Split(low_, high_, p1);
  if (bit) {
    high_ = split;
  } else {
    low_ = split + 1;
  }
  for (;;) {
    if (high_ < kHalf) {
      PutBitWithPending(0);
    } else if (low_ >= kHalf) {
      PutBitWithPending(1);
      low_ -= kHalf;
      high_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      ++pending_;
      low_ -= kQuarter;
      high_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1u;
  }
}

std::vector<std::uint8_t> ArithmeticEncoder::Finish() {
  ++pending_;
  PutBitWithPending(low_ < kQuarter ? 0 : 1);
  while (filled_ != 0) PutBit(0);
  return std::move(out_);
}

ArithmeticDecoder::ArithmeticDecoder(std::span<const std::uint8_t> data)
    : data_(data) {
  for (int b = 0; b < 32; ++b) value_ = (value_ << 1) | NextBit();
}

int ArithmeticDecoder::NextBit() {
  const std::size_t total = data_.size() * 8;
  int bit = 0;
  if (bit_pos_ < total) {
    bit = (data_[bit_pos_ / 8] >> (7 - bit_pos_ % 8)) & 1;
  } else if (bit_pos_ - total >= kMaxOverrunBits) {
    throw FormatError(FormatErrorKind::kTruncated,
                      "arithmetic decoder ran past the end of a " +
                          std::to_string(data_.size()) + "-byte payload");
  }
  ++bit_pos_;
  return bit;
}

int ArithmeticDecoder::Decode(double p1) {
  const std::uint32_t split = Split(low_, high_, p1);
  const int bit = value_ <= split ? 1 : 0;
  if (bit) {
    high_ = split;
  } else {
    low_ = split + 1;
  }
  for (;;) {
    if (high_ < kHalf) {
      // nothing to subtract
    } else if (low_ >= kHalf) {
      low_ -= kHalf;
      high_ -= kHalf;
      value_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      low_ -= kQuarter;
      high_ -= kQuarter;
      value_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1u;
    value_ = (value_ << 1) | static_cast<std::uint32_t>(NextBit());
  }
  return bit;
}

std::vector<std::uint8_t> AcEncode(std::span<const std::uint8_t> bits,
                                   std::span<const double> probs) {
  if (bits.size() != probs.size()) {
    throw InvalidArgument("ac_encode: " + std::to_string(bits.size()) +
                          " bits but " + std::to_string(probs.size()) +
                          " probabilities");
  }
  ArithmeticEncoder enc;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    enc.Encode(bits[i], ClampProbability(probs[i]));
  }
  return enc.Finish();
}

std::vector<std::uint8_t> AcDecode(
    std::span<const std::uint8_t> bytes,
    const std::function<double(std::size_t)>& prob, std::size_t count) {
  ArithmeticDecoder dec(bytes);
  std::vector<std::uint8_t> bits(count);
  for (std::size_t i = 0; i < count; ++i) {
    bits[i] = static_cast<std::uint8_t>(dec.Decode(ClampProbability(prob(i))));
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Payloads

namespace {

std::vector<std::uint8_t> EncodeScheduled(const BitVolume& bits,
                                          const BitVolume& mask,
                                          AdaptiveModel model) {
  ArithmeticEncoder enc;
  for (const Position& pos : Schedule(mask)) {
    const ContextCuboid ctx = ExtractContext(bits, mask, pos.k, pos.i, pos.j);
    const int bit = bits.at(static_cast<std::size_t>(pos.k),
                            static_cast<std::size_t>(pos.i),
                            static_cast<std::size_t>(pos.j));
    enc.Encode(bit, model.Predict(ctx));
    model.Update(ctx, bit);
  }
  return enc.Finish();
}

BitVolume DecodeScheduled(std::span<const std::uint8_t> bytes,
                          const BitVolume& mask, AdaptiveModel model) {
  BitVolume bits(mask.channels(), mask.height(), mask.width());
  ArithmeticDecoder dec(bytes);
  for (const Position& pos : Schedule(mask)) {
    const ContextCuboid ctx = ExtractContext(bits, mask, pos.k, pos.i, pos.j);
    const int bit = dec.Decode(model.Predict(ctx));
    bits.at(static_cast<std::size_t>(pos.k), static_cast<std::size_t>(pos.i),
            static_cast<std::size_t>(pos.j)) = static_cast<std::uint8_t>(bit);
    model.Update(ctx, bit);
  }
  return bits;
}

void CheckSameShape(const BitVolume& a, const BitVolume& b) {
  if (a.channels() != b.channels() || a.height() != b.height() ||
      a.width() != b.width()) {
    throw InvalidArgument("entropy: code and mask shapes differ");
  }
}

}  // namespace

std::vector<std::uint8_t> EncodeCodes(const BitVolume& codes,
                                      const BitVolume& mask,
                                      const EntropyModel& model) {
  CheckSameShape(codes, mask);
  return EncodeScheduled(codes, mask, AdaptiveModel(model, Payload::kCodes));
}

BitVolume DecodeCodes(std::span<const std::uint8_t> bytes,
                      const BitVolume& mask, const EntropyModel& model) {
  return DecodeScheduled(bytes, mask, AdaptiveModel(model, Payload::kCodes));
}

int BitplaneCount(int L) {
  if (L < 2) throw InvalidArgument("bitplanes: L must be >= 2");
  int nb = 0;
  while ((1 << nb) < L) ++nb;
  return nb;
}

BitVolume BinarizeImportance(const ImportanceMap& imp_q, int L) {
  const int nb = BitplaneCount(L);
  BitVolume planes(static_cast<std::size_t>(nb), imp_q.height, imp_q.width);
  for (std::size_t i = 0; i < imp_q.height; ++i) {
    for (std::size_t j = 0; j < imp_q.width; ++j) {
      const int q = imp_q.at(i, j);
      if (q < 0 || q >= (1 << nb)) {
        throw InvalidArgument("bitplanes: level " + std::to_string(q) +
                              " not representable in " + std::to_string(nb) +
                              " planes");
      }
      for (int b = 0; b < nb; ++b) {
        planes.at(static_cast<std::size_t>(b), i, j) =
            static_cast<std::uint8_t>((q >> b) & 1);
      }
    }
  }
  return planes;
}

ImportanceMap DebinarizeImportance(const BitVolume& planes) {
  ImportanceMap imp_q{planes.height(), planes.width(),
                      std::vector<int>(planes.height() * planes.width(), 0)};
  for (std::size_t b = 0; b < planes.channels(); ++b) {
    for (std::size_t i = 0; i < planes.height(); ++i) {
      for (std::size_t j = 0; j < planes.width(); ++j) {
        imp_q.at(i, j) |= planes.at(b, i, j) << b;
      }
    }
  }
  return imp_q;
}

std::vector<std::uint8_t> EncodeImportance(const ImportanceMap& imp_q, int L,
                                           const EntropyModel& model) {
  const BitVolume planes = BinarizeImportance(imp_q, L);
  const BitVolume all(planes.channels(), planes.height(), planes.width(), 1);
  return EncodeScheduled(planes, all, AdaptiveModel(model, Payload::kImportance));
}

ImportanceMap DecodeImportance(std::span<const std::uint8_t> bytes,
                               const EntropyModel& model, std::size_t height,
                               std::size_t width, int L) {
  const BitVolume all(static_cast<std::size_t>(BitplaneCount(L)), height,
                      width, 1);
  ImportanceMap imp_q = DebinarizeImportance(
      DecodeScheduled(bytes, all, AdaptiveModel(model, Payload::kImportance)));
  for (int q : imp_q.levels) {
    if (q >= L) {
      throw FormatError(FormatErrorKind::kBitCountMismatch,
                        "importance payload decodes to level " +
                            std::to_string(q) + " >= L=" + std::to_string(L));
    }
  }
  return imp_q;
}

std::vector<std::uint8_t> PackBits(std::span<const std::uint8_t> bits) {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t b = 0; b < bits.size(); ++b) {
    if (bits[b]) out[b / 8] |= static_cast<std::uint8_t>(0x80u >> (b % 8));
  }
  return out;
}

std::vector<std::uint8_t> UnpackBits(std::span<const std::uint8_t> bytes,
                                     std::size_t count) {
  if (bytes.size() != (count + 7) / 8) {
    throw FormatError(FormatErrorKind::kBitCountMismatch,
                      "raw payload holds " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string((count + 7) / 8) +
                          " for " + std::to_string(count) + " bits");
  }
  std::vector<std::uint8_t> bits(count);
  for (std::size_t b = 0; b < count; ++b) {
    bits[b] = (bytes[b / 8] >> (7 - b % 8)) & 1;
  }
  return bits;
}

std::vector<std::uint8_t> PackScheduled(const BitVolume& bits,
                                        const BitVolume& mask) {
  CheckSameShape(bits, mask);
  std::vector<std::uint8_t> seq;
  seq.reserve(mask.Count());
  for (const Position& p : Schedule(mask)) {
    seq.push_back(bits.at(static_cast<std::size_t>(p.k),
                          static_cast<std::size_t>(p.i),
                          static_cast<std::size_t>(p.j)));
  }
  return PackBits(seq);
}

BitVolume UnpackScheduled(std::span<const std::uint8_t> bytes,
                          const BitVolume& mask) {
  const std::vector<Position> order = Schedule(mask);
  const std::vector<std::uint8_t> seq = UnpackBits(bytes, order.size());
  BitVolume bits(mask.channels(), mask.height(), mask.width());
  for (std::size_t s = 0; s < order.size(); ++s) {
    bits.at(static_cast<std::size_t>(order[s].k),
            static_cast<std::size_t>(order[s].i),
            static_cast<std::size_t>(order[s].j)) = seq[s];
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Training

std::vector<ContextSample> HarvestCodeContexts(const BitVolume& codes,
                                               const BitVolume& mask) {
  CheckSameShape(codes, mask);
  std::vector<ContextSample> out;
  out.reserve(mask.Count());
  for (const Position& p : Schedule(mask)) {
    out.push_back({ExtractContext(codes, mask, p.k, p.i, p.j),
                   codes.at(static_cast<std::size_t>(p.k),
                            static_cast<std::size_t>(p.i),
                            static_cast<std::size_t>(p.j)),
                   1});
  }
  return out;
}

std::vector<ContextSample> HarvestImportanceContexts(const ImportanceMap& imp_q,
                                                     int L) {
  const BitVolume planes = BinarizeImportance(imp_q, L);
  const BitVolume all(planes.channels(), planes.height(), planes.width(), 1);
  return HarvestCodeContexts(planes, all);
}

double MaskedNllBits(const ContextNet& net,
                     std::span<const ContextSample> corpus) {
  double total = 0.0;
  double weight = 0.0;
  for (const ContextSample& s : corpus) {
    if (!s.mask) continue;
    const double p = ClampProbability(net.Predict(s.cuboid));
    total -= std::log2(s.bit ? p : 1.0 - p);
    weight += 1.0;
  }
  return weight > 0 ? total / weight : 0.0;
}

class ContextNetTrainer {
 public:
  explicit ContextNetTrainer(ContextNet net) : net_(std::move(net)) {
    for (auto a : net_.Arrays()) grads_.emplace_back(a.size(), 0.0);
  }

  // Accumulates gradients of the batch's mean masked cross-entropy (bits)
  // and returns that mean.
  double Accumulate(std::span<const ContextSample* const> batch) {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
    double weight = 0.0;
    for (const ContextSample* s : batch) weight += s->mask;
    if (weight == 0.0) return 0.0;
    constexpr int H1 = ContextNet::kHidden1;
    constexpr int H2 = ContextNet::kHidden2;
    std::vector<double>& gw1 = grads_[0];
    std::vector<double>& gb1 = grads_[1];
    std::vector<double>& gw2 = grads_[2];
    std::vector<double>& gb2 = grads_[3];
    std::vector<double>& gw3 = grads_[4];
    std::vector<double>& gb3 = grads_[5];
    double loss = 0.0;
    NetActivations act;
    std::array<double, H2> dh2;
    std::array<double, H1> dh1;
    for (const ContextSample* s : batch) {
      if (!s->mask) continue;
      Forward(net_.w1_, net_.b1_, net_.w2_, net_.b2_, net_.w3_, net_.b3_,
              s->cuboid, act);
      // -log2 sigmoid(+/-z) computed from the logit for stability.
      const double z = s->bit ? act.logit : -act.logit;
      loss += (z >= 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z))) /
              std::numbers::ln2;
      const double dz = (StableSigmoid(act.logit) - s->bit) * s->mask /
                        (weight * std::numbers::ln2);
      gb3[0] += dz;
      for (int o = 0; o < H2; ++o) {
        gw3[o] += dz * act.h2[o];
        dh2[o] = act.h2[o] > 0 ? dz * net_.w3_[o] : 0.0;
        gb2[o] += dh2[o];
      }
      for (int u = 0; u < H1; ++u) {
        double acc = 0.0;
        if (act.h1[u] > 0) {
          const double* row = net_.w2_.data() + static_cast<std::size_t>(u) * H2;
          double* grow = gw2.data() + static_cast<std::size_t>(u) * H2;
          for (int o = 0; o < H2; ++o) {
            grow[o] += act.h1[u] * dh2[o];
            acc += row[o] * dh2[o];
          }
        }
        dh1[u] = acc;
        gb1[u] += acc;
      }
      for (int pos = 0; pos < kContextLength; ++pos) {
        double* row =
            gw1.data() + static_cast<std::size_t>(3 * pos + s->cuboid[pos]) * H1;
        for (int u = 0; u < H1; ++u) row[u] += dh1[u];
      }
    }
    return loss / weight;
  }

  void Step(double lr) {
    std::vector<std::span<double>> params = net_.Arrays();
    std::vector<std::span<const double>> grads(grads_.begin(), grads_.end());
    AdamStep(params, grads, adam_, lr);
  }

  ContextNet Take() { return std::move(net_); }

 private:
  ContextNet net_;
  std::vector<std::vector<double>> grads_;
  AdamState adam_;
};

ContextNet TrainContextNet(ContextNet init,
                           std::span<const ContextSample> corpus,
                           const EntropyTrainConfig& config) {
  if (corpus.empty()) throw InvalidArgument("train_entropy: empty corpus");
  if (config.batch_size == 0) {
    throw InvalidArgument("train_entropy: batch size must be positive");
  }
  ContextNetTrainer trainer(std::move(init));
  Rng rng(config.seed);
  std::vector<const ContextSample*> batch(config.batch_size);
  for (double lr : config.lr_ladder) {
    PlateauDetector plateau(config.plateau_window, config.plateau_patience);
    for (std::size_t step = 0; step < config.steps_per_stage; ++step) {
      for (auto& s : batch) s = &corpus[rng.Below(corpus.size())];
      const double loss = trainer.Accumulate(batch);
      trainer.Step(lr);
      if (plateau.Push(loss)) break;
    }
  }
  ContextNet net = trainer.Take();
  for (auto a : net.Arrays()) {
    for (double& v : a) v = static_cast<float>(v);
  }
  return net;
}

FrequencyTable FitFrequencyTable(std::span<const ContextSample> corpus) {
  FrequencyTable table;
  for (const ContextSample& s : corpus) {
    if (s.mask) table.Update(s.cuboid, s.bit);
  }
  return table;
}

}  // namespace cwic
