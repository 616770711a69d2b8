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

#include <cmath>
#include <filesystem>
#include <map>
#include <tuple>
#include <vector>

#include "cwic/error.hpp"
#include "cwic/entropy.hpp"
#include "cwic/random.hpp"
#include "doctest.h"

namespace cwic {
namespace {

struct RandomVolume {
  BitVolume codes;
  BitVolume mask;
};

RandomVolume RandomBundle(Rng& rng, std::size_t max_side = 8) {
  const std::size_t n = 1 + rng.Below(max_side), h = 1 + rng.Below(max_side),
                    w = 1 + rng.Below(max_side);
  RandomVolume v{BitVolume(n, h, w), BitVolume(n, h, w)};
  const double keep = rng.Uniform();
  for (std::size_t i = 0; i < v.mask.size(); ++i) {
    v.mask.bits()[i] = rng.Uniform() < keep;
    v.codes.bits()[i] = v.mask.bits()[i] && rng.Below(2);
  }
  return v;
}

double CrossEntropyBits(std::span<const std::uint8_t> bits,
                        std::span<const double> probs) {
  double total = 0.0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    total -= std::log2(bits[i] ? probs[i] : 1.0 - probs[i]);
  }
  return total;
}

// Availability defined purely by schedule rank.
ContextCuboid OracleContext(const BitVolume& bits, const BitVolume& mask,
                            const std::vector<Position>& order,
                            std::size_t current) {
  std::map<std::tuple<int, int, int>, std::size_t> rank;
  for (std::size_t r = 0; r < order.size(); ++r) {
    rank[{order[r].k, order[r].i, order[r].j}] = r;
  }
  const Position c = order[current];
  ContextCuboid out{};
  for (int m = 0; m < 4; ++m) {
    for (int dy = 0; dy < 5; ++dy) {
      for (int dx = 0; dx < 5; ++dx) {
        const auto it = rank.find({c.k - 3 + m, c.i + dy - 2, c.j + dx - 2});
        if (it == rank.end() || it->second >= current) continue;
        const Position& p = order[it->second];
        out[CuboidIndex(m, dy, dx)] = 1 + bits.at(p.k, p.i, p.j);
      }
    }
  }
  (void)mask;
  return out;
}

TEST_CASE("schedule") {
  BitVolume ones(2, 2, 2, 1);
  const auto s = Schedule(ones);
  REQUIRE(s.size() == 8);
  CHECK(s[0] == Position{0, 0, 0});
  CHECK(s[1] == Position{0, 0, 1});
  CHECK(s[2] == Position{0, 1, 0});
  CHECK(s[4] == Position{1, 0, 0});
  CHECK(Schedule(BitVolume(3, 2, 2, 0)).empty());
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const RandomVolume v = RandomBundle(rng);
    CHECK(Schedule(v.mask).size() == v.mask.Count());
  }
}

TEST_CASE("context examples") {
  BitVolume bits(4, 3, 3, 1), mask(4, 3, 3, 1);
  const ContextCuboid first = ExtractContext(bits, mask, 0, 0, 0);
  for (auto s : first) CHECK(s == 0);

  const ContextCuboid c = ExtractContext(bits, mask, 3, 1, 1);
  CHECK(c[CuboidIndex(3, 2, 2)] == 0);
  CHECK(c[CuboidIndex(3, 2, 1)] == 2);
  CHECK(c[CuboidIndex(3, 2, 3)] == 0);
  CHECK(c[CuboidIndex(2, 2, 2)] == 2);
  CHECK(c[CuboidIndex(0, 3, 3)] == 2);
  CHECK(c[CuboidIndex(0, 0, 0)] == 0);

  bits.at(3, 1, 0) = 0;
  mask.at(3, 0, 1) = 0;
  const ContextCuboid d = ExtractContext(bits, mask, 3, 1, 1);
  CHECK(d[CuboidIndex(3, 2, 1)] == 1);
  CHECK(d[CuboidIndex(3, 1, 2)] == 0);
}

TEST_CASE("context symmetry between encoder and decoder") {
  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    const RandomVolume v = RandomBundle(rng);
    const auto order = Schedule(v.mask);
    // Decoder view: decoded bits so far, garbage everywhere else.
    BitVolume partial(v.codes.channels(), v.codes.height(), v.codes.width());
    for (auto& b : partial.bits()) b = rng.Below(2);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const Position& p = order[r];
      const ContextCuboid enc = ExtractContext(v.codes, v.mask, p.k, p.i, p.j);
      const ContextCuboid dec = ExtractContext(partial, v.mask, p.k, p.i, p.j);
      REQUIRE(enc == dec);
      if (r % 7 == 0) REQUIRE(enc == OracleContext(v.codes, v.mask, order, r));
      CHECK(enc[CuboidIndex(3, 2, 2)] == 0);
      partial.at(p.k, p.i, p.j) = v.codes.at(p.k, p.i, p.j);
    }
  }
}

TEST_CASE("predict examples") {
  ContextCuboid cuboid{};
  cuboid[5] = 2;
  CHECK(Predict(EntropyModel{}, cuboid) == 0.5);
  FrequencyTable table;
  for (int i = 0; i < 9; ++i) table.Update(cuboid, 1);
  table.Update(cuboid, 0);
  CHECK(table.Predict(cuboid) == doctest::Approx(10.0 / 12.0));
  const ContextNet net = ContextNet::Random(3);
  CHECK(net.Predict(cuboid) == net.Predict(cuboid));
  for (int t = 0; t < 50; ++t) {
    const double p = Predict(EntropyModel::Net(net, net), cuboid);
    CHECK(p >= kMinProbability);
    CHECK(p <= kMaxProbability);
  }
  CHECK(ClampProbability(0.0) == kMinProbability);
  CHECK(ClampProbability(1.0) == kMaxProbability);
}

TEST_CASE("frequency context index reads the five nearest bits") {
  ContextCuboid c{};
  CHECK(FrequencyTable::ContextIndex(c) == 0);
  c[CuboidIndex(3, 2, 1)] = 2;
  c[CuboidIndex(2, 2, 2)] = 1;
  CHECK(FrequencyTable::ContextIndex(c) == 2 * 81 + 1);
  c[CuboidIndex(0, 0, 0)] = 2;
  CHECK(FrequencyTable::ContextIndex(c) == 2 * 81 + 1);
}

TEST_CASE("arithmetic coder examples") {
  std::vector<std::uint8_t> bits(1000);
  Rng rng(4);
  for (auto& b : bits) b = rng.Below(2);
  std::vector<double> half(1000, 0.5);
  const auto uniform = AcEncode(bits, half);
  CHECK(uniform.size() >= 125);
  CHECK(uniform.size() <= 125 + 8);
  CHECK(AcDecode(uniform, [](std::size_t) { return 0.5; }, 1000) == bits);

  std::vector<std::uint8_t> ones(1000, 1);
  std::vector<double> skew(1000, 0.99);
  const auto skewed = AcEncode(ones, skew);
  CHECK(skewed.size() <= 2 + 8);
  CHECK(AcDecode(skewed, [](std::size_t) { return 0.99; }, 1000) == ones);

  const auto empty = AcEncode({}, {});
  CHECK(empty.size() <= 8);
  CHECK(AcDecode(empty, [](std::size_t) { return 0.5; }, 0).empty());
}

TEST_CASE("arithmetic coder roundtrip and length bound") {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    const std::size_t count = rng.Below(20000);
    std::vector<std::uint8_t> bits(count);
    std::vector<double> probs(count);
    for (std::size_t i = 0; i < count; ++i) {
      probs[i] = ClampProbability(rng.Uniform());
      bits[i] = rng.Uniform() < probs[i];
    }
    const auto bytes = AcEncode(bits, probs);
    CHECK(AcDecode(bytes, [&](std::size_t i) { return probs[i]; }, count) == bits);
    CHECK(8.0 * bytes.size() <= CrossEntropyBits(bits, probs) + 64.0);
  }
}

TEST_CASE("arithmetic coder extreme probabilities") {
  std::vector<std::uint8_t> bits(5000);
  std::vector<double> probs(5000);
  Rng rng(2);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    probs[i] = rng.Below(2) ? kMinProbability : kMaxProbability;
    bits[i] = rng.Below(10) == 0 ? probs[i] < 0.5 : probs[i] > 0.5;
  }
  const auto bytes = AcEncode(bits, probs);
  CHECK(AcDecode(bytes, [&](std::size_t i) { return probs[i]; }, bits.size()) == bits);
}

TEST_CASE("arithmetic decoder rejects truncated input") {
  std::vector<std::uint8_t> bits(4000);
  std::vector<double> probs(4000, 0.5);
  Rng rng(6);
  for (auto& b : bits) b = rng.Below(2);
  auto bytes = AcEncode(bits, probs);
  bytes.resize(bytes.size() / 2);
  try {
    AcDecode(bytes, [](std::size_t) { return 0.5; }, bits.size());
    FAIL("expected truncation");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::kTruncated);
  }
}

TEST_CASE("code payload roundtrip under both models") {
  Rng rng(10);
  FrequencyTable prior;
  prior.counts(0) = {20, 3};
  const EntropyModel models[] = {EntropyModel::Net(ContextNet::Random(1), ContextNet::Random(2)),
                                 EntropyModel::Frequency(prior, {})};
  for (int t = 0; t < 100; ++t) {
    const RandomVolume v = RandomBundle(rng);
    const EntropyModel& model = models[t % 2];
    const auto bytes = EncodeCodes(v.codes, v.mask, model);
    CHECK(DecodeCodes(bytes, v.mask, model) == v.codes);
    CHECK(UnpackScheduled(PackScheduled(v.codes, v.mask), v.mask) == v.codes);
    CHECK(PackScheduled(v.codes, v.mask).size() == (v.mask.Count() + 7) / 8);
  }
  CHECK_THROWS_AS(EncodeCodes(BitVolume(2, 2, 2), BitVolume(2, 2, 3), models[0]),
                  InvalidArgument);
}

TEST_CASE("bitplanes") {
  CHECK(BitplaneCount(16) == 4);
  CHECK(BitplaneCount(32) == 5);
  CHECK(BitplaneCount(17) == 5);
  CHECK(BitplaneCount(2) == 1);
  ImportanceMap m{1, 2, {13, 0}};
  const BitVolume planes = BinarizeImportance(m, 16);
  REQUIRE(planes.channels() == 4);
  CHECK(planes.at(0, 0, 0) == 1);
  CHECK(planes.at(1, 0, 0) == 0);
  CHECK(planes.at(2, 0, 0) == 1);
  CHECK(planes.at(3, 0, 0) == 1);
  for (int b = 0; b < 4; ++b) CHECK(planes.at(b, 0, 1) == 0);
  CHECK(DebinarizeImportance(planes) == m);
  for (int L : {16, 32}) {
    const int nb = BitplaneCount(L);
    CHECK((1 << (nb - 1)) < L);
    CHECK(L <= (1 << nb));
    ImportanceMap all{1, std::size_t(L), {}};
    for (int q = 0; q < L; ++q) all.levels.push_back(q);
    CHECK(DebinarizeImportance(BinarizeImportance(all, L)) == all);
  }
  ImportanceMap bad{1, 1, {16}};
  CHECK_THROWS_AS(BinarizeImportance(bad, 16), InvalidArgument);
}

TEST_CASE("importance payload") {
  Rng rng(12);
  const EntropyModel model = EntropyModel::Frequency();
  for (int t = 0; t < 40; ++t) {
    const int L = t % 2 ? 16 : 32;
    ImportanceMap m{1 + rng.Below(12), 1 + rng.Below(12), {}};
    m.levels.resize(m.height * m.width);
    for (int& q : m.levels) q = rng.Below(L);
    const auto bytes = EncodeImportance(m, L, model);
    CHECK(DecodeImportance(bytes, model, m.height, m.width, L) == m);
  }
  ImportanceMap flat{16, 16, std::vector<int>(256, 9)};
  const auto coded = EncodeImportance(flat, 16, model);
  CHECK(8 * coded.size() * 4 < 4 * 256);
  CHECK(PackBits(BinarizeImportance(flat, 16).bits()).size() * 8 == 4 * 256);

  // Level 31 under L=17 still fits five planes but is out of range.
  ImportanceMap high{1, 1, {31}};
  const auto over = EncodeImportance(high, 32, model);
  CHECK_THROWS_AS(DecodeImportance(over, model, 1, 1, 17), FormatError);
}

TEST_CASE("raw bit packing") {
  const std::vector<std::uint8_t> bits{1, 0, 1, 1, 0, 0, 0, 0, 1};
  const auto packed = PackBits(bits);
  REQUIRE(packed.size() == 2);
  CHECK(packed[0] == 0xB0);
  CHECK(packed[1] == 0x80);
  CHECK(UnpackBits(packed, 9) == bits);
  CHECK_THROWS_AS(UnpackBits(packed, 20), FormatError);
}

TEST_CASE("masked nll and training") {
  CHECK(MaskedNllBits(ContextNet{}, std::vector<ContextSample>{
                                        {ContextCuboid{}, 1, 1},
                                        {ContextCuboid{}, 0, 1}}) == doctest::Approx(1.0));

  // Bit equals the left neighbour's value: perfectly predictable.
  Rng rng(3);
  std::vector<ContextSample> corpus;
  for (int t = 0; t < 600; ++t) {
    ContextSample s{};
    const int left = rng.Below(2);
    s.cuboid[CuboidIndex(3, 2, 1)] = 1 + left;
    s.cuboid[CuboidIndex(2, 2, 2)] = 1 + rng.Below(2);
    s.bit = left;
    s.mask = 1;
    corpus.push_back(s);
  }
  std::vector<ContextSample> noisy = corpus;
  for (auto& s : noisy) s.mask = 0;
  for (int i = 0; i < 100; ++i) noisy.push_back({ContextCuboid{}, 1, 0});

  EntropyTrainConfig cfg;
  cfg.lr_ladder = {1e-2, 1e-3};
  cfg.steps_per_stage = 300;
  cfg.batch_size = 32;
  const ContextNet init = ContextNet::Random(5);
  const ContextNet trained = TrainContextNet(init, corpus, cfg);
  CHECK(MaskedNllBits(trained, corpus) < 0.05);
  CHECK(MaskedNllBits(trained, noisy) == 0.0);

  std::vector<ContextSample> mixed = corpus;
  for (int i = 0; i < 100; ++i) mixed.push_back({corpus[i].cuboid, std::uint8_t(1 - corpus[i].bit), 0});
  CHECK(MaskedNllBits(trained, mixed) == MaskedNllBits(trained, corpus));

  CHECK_THROWS_AS(TrainContextNet(init, std::vector<ContextSample>{}, cfg), InvalidArgument);
  const ContextNet again = TrainContextNet(init, corpus, cfg);
  CHECK(again == trained);
}

TEST_CASE("frequency table fitting") {
  std::vector<ContextSample> corpus;
  ContextSample s{};
  s.bit = 1;
  s.mask = 1;
  corpus.assign(5, s);
  s.mask = 0;
  corpus.push_back(s);
  const FrequencyTable t = FitFrequencyTable(corpus);
  CHECK(t.counts(0)[1] == 5);
  CHECK(t.counts(0)[0] == 0);
}

TEST_CASE("entropy model file") {
  const EntropyModel net = EntropyModel::Net(ContextNet::Random(1), ContextNet::Random(2));
  CHECK(DeserializeEntropyModel(SerializeEntropyModel(net)) == net);
  FrequencyTable t;
  t.counts(7) = {4, 9};
  const EntropyModel freq = EntropyModel::Frequency(t, {});
  CHECK(DeserializeEntropyModel(SerializeEntropyModel(freq)) == freq);
  CHECK(net.Checksum() != freq.Checksum());

  auto bytes = SerializeEntropyModel(freq);
  auto bad = bytes;
  bad[1] = 'X';
  try {
    DeserializeEntropyModel(bad);
    FAIL("expected error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::kBadMagic);
    CHECK(std::string(e.what()).find("CWEN") != std::string::npos);
  }
  auto kind = bytes;
  kind[5] = 7;
  CHECK_THROWS_AS(DeserializeEntropyModel(kind), FormatError);
  bytes.pop_back();
  CHECK_THROWS_AS(DeserializeEntropyModel(bytes), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "cwic_entropy_test.cwen";
  SaveEntropyModel(net, path.string());
  CHECK(LoadEntropyModel(path.string()) == net);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace cwic
