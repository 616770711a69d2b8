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
#include <string>
#include <vector>

#include "cwic/container.hpp"
#include "cwic/error.hpp"
#include "cwic/nets.hpp"
#include "cwic/optim.hpp"
#include "cwic/random.hpp"
#include "cwic/train.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace cwic {
namespace {

namespace fs = std::filesystem;

TrainConfig SmallConfig() {
  TrainConfig c;
  c.patch_size = 16;
  c.batch_size = 2;
  c.rate_threshold = 0.0;
  return c;
}

TEST_CASE("distortion loss") {
  Tape tape;
  Rng rng(1);
  Tensor x = testing::RandomTensor({1, 3, 2, 2}, rng);
  Tensor shifted = x;
  for (double& v : shifted.vec()) v += 0.1;
  CHECK(DistortionLoss(tape.Constant(x), tape.Constant(x)).value().item() == 0.0);
  Var xh = tape.Variable(shifted);
  Var d = DistortionLoss(xh, tape.Constant(x));
  CHECK(d.value().item() == doctest::Approx(0.12).epsilon(1e-12));
  tape.Backward(d);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(xh.grad()[i] == doctest::Approx(2 * (shifted[i] - x[i])));
  }
}

TEST_CASE("rate loss") {
  auto rate = [](double per_cell, std::size_t cells, double r) {
    Tape tape;
    Var p = tape.Constant(Tensor({1, 1, 1, cells}, per_cell));
    return RateLoss(p, r).value().item();
  };
  CHECK(rate(0.5, 200, 120.0) == 0.0);
  CHECK(rate(0.75, 200, 120.0) == doctest::Approx(30.0));
  CHECK(rate(0.3, 10, 0.0) == doctest::Approx(3.0));

  // Per-image threshold: one image above r, one below.
  Tape tape;
  Tensor p({2, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    p[i] = 0.9;
    p[4 + i] = 0.1;
  }
  Var pv = tape.Variable(p);
  Var loss = RateLoss(pv, 1.0);
  CHECK(loss.value().item() == doctest::Approx(2.6));
  tape.Backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(pv.grad()[i] == 1.0);
    CHECK(pv.grad()[4 + i] == 0.0);
  }
}

TEST_CASE("rate loss gradient matches finite differences on smooth branch") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    Tensor p = testing::RandomTensor({2, 1, 3, 3}, rng, 0.3, 0.99);
    const double r = rng.Uniform(0.0, 2.0);
    auto fn = [&](Tape&, const std::vector<Var>& v) { return RateLoss(v[0], r); };
    const auto a = testing::AnalyticGrads(fn, {p});
    const auto nd = testing::NumericGrads(fn, {p});
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(std::abs(a[0][i] - nd[0][i]) < 1e-6);
    }
  }
}

TEST_CASE("rate threshold derivation") {
  TrainConfig c;
  c.bpp = 0.5;
  c.patch_size = 128;
  c.n = 64;
  CHECK(c.RateThreshold() == doctest::Approx(0.5 * 16 * 16));
  c.n = 128;
  CHECK(c.RateThreshold() == doctest::Approx(0.25 * 16 * 16));
  c.rate_threshold = 7.0;
  CHECK(c.RateThreshold() == 7.0);
}

TEST_CASE("objective") {
  const ModelParams params = InitParams(2, 64);
  const PatchSet set = SyntheticPatches(2, 16, 2);
  const std::vector<std::size_t> idx{0, 1};
  const Tensor batch = MakeBatch(set, idx);
  TrainConfig c = SmallConfig();
  const ObjectiveTerms t = Objective(batch, params, c);
  CHECK(std::isfinite(t.total));
  CHECK(t.total > 0.0);
  CHECK(t.total == doctest::Approx(t.distortion + c.gamma * t.rate));
  CHECK(t.rate == doctest::Approx(t.importance_sum));
  c.gamma = 0.0;
  CHECK(Objective(batch, params, c).total == t.distortion);

  c.importance_map = false;
  ModelParams plain = params;
  plain.importance_enabled = false;
  const ObjectiveTerms u = Objective(batch, plain, c);
  CHECK(u.rate == 0.0);
  CHECK(u.total == u.distortion);
}

TEST_CASE("every layer receives a finite nonzero gradient") {
  const ModelParams params = InitParams(4, 64);
  const PatchSet set = SyntheticPatches(1, 16, 4);
  const std::vector<std::size_t> idx{0};
  ModelParams grads = params.ZerosLike();
  Objective(MakeBatch(set, idx), params, SmallConfig(), &grads);
  for (const ConvLayer* layer : grads.Layers()) {
    double mag = 0.0;
    for (double g : layer->weight.vec()) {
      REQUIRE(std::isfinite(g));
      mag += std::abs(g);
    }
    CHECK(mag > 0.0);
  }
}

TEST_CASE("disabled importance map gives a full mask") {
  ModelParams params = InitParams(4, 64);
  params.importance_enabled = false;
  const PatchSet set = SyntheticPatches(1, 16, 4);
  const std::vector<std::size_t> idx{0};
  const Tensor batch = MakeBatch(set, idx);
  const EncodedImage enc = Encode(batch, params);
  const CodeBundle b = MakeBundle(enc.code, Tensor({1, 1, 2, 2}, 0.5), 16, false);
  CHECK(b.mask.Count() == 64u * 2 * 2);
}

TEST_CASE("adam examples") {
  std::vector<double> p{1.0, -2.0};
  std::vector<double> zero{0.0, 0.0};
  std::vector<double> one{1.0, 1.0};
  AdamState state;
  {
    std::vector<std::span<double>> ps{p};
    std::vector<std::span<const double>> gs{zero};
    AdamStep(ps, gs, state, 0.1);
  }
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);

  AdamState fresh;
  std::vector<double> q{1.0, -2.0};
  std::vector<std::span<double>> qs{q};
  std::vector<std::span<const double>> gs{one};
  AdamStep(qs, gs, fresh, 1e-3);
  CHECK(q[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
  CHECK(q[1] == doctest::Approx(-2.0 - 1e-3).epsilon(1e-9));
  CHECK(fresh.step == 1);
}

TEST_CASE("plateau detector") {
  PlateauDetector d(1, 2);
  CHECK_FALSE(d.Push(10));
  CHECK_FALSE(d.Push(9));
  CHECK_FALSE(d.Push(9));
  CHECK(d.Push(9));
  CHECK(d.checks() == 4);

  PlateauDetector blocks(3, 1);
  for (double v : {5.0, 5.0, 5.0, 4.0, 4.0, 4.0}) CHECK_FALSE(blocks.Push(v));
  CHECK_FALSE(blocks.Push(1.0));
  CHECK_FALSE(blocks.Push(9.0));
  CHECK(blocks.Push(9.0));
}

TEST_CASE("training visits the ladder and is deterministic") {
  TrainConfig c = SmallConfig();
  c.max_iters_per_stage = 3;
  const PatchSet set = SyntheticPatches(3, 16, 1);
  const ModelParams init = InitParams(1, 64);
  const TrainResult a = Train(c, set, init);
  const TrainResult b = Train(c, set, init);
  CHECK(a.stage_iterations == std::vector<std::size_t>{3, 3, 3});
  CHECK(a.history.size() == 9);
  CHECK(a.history[0].lr == 1e-4);
  CHECK(a.history[8].lr == 1e-6);
  CHECK(SerializeModel(a.params) == SerializeModel(b.params));
  CHECK(SerializeModel(a.params) != SerializeModel(init));

  c.plateau_window = 1;
  c.plateau_patience = 1;
  c.max_iters_per_stage = 50;
  c.lr_ladder = {0.0};
  const TrainResult stalled = Train(c, SyntheticPatches(1, 16, 1), init);
  CHECK(stalled.stage_iterations[0] == 2);

  CHECK_THROWS_AS(Train(c, PatchSet{16, {}}, init), InvalidArgument);
}

TEST_CASE("objective decreases over ADAM steps") {
  TrainConfig c = SmallConfig();
  c.max_iters_per_stage = 60;
  c.lr_ladder = {1e-4};
  c.batch_size = 2;
  const PatchSet set = SyntheticPatches(2, 16, 8);
  const std::vector<std::size_t> idx{0, 1};
  const Tensor batch = MakeBatch(set, idx);
  const ModelParams init = InitParams(8, 64);
  const double before = Objective(batch, init, c).total;
  const TrainResult r = Train(c, set, init);
  CHECK(Objective(batch, r.params, c).total < before);
}

TEST_CASE("config text roundtrip and errors") {
  TrainConfig c;
  c.gamma = 0.05;
  c.n = 128;
  c.lr_ladder = {1e-3, 1e-4};
  c.importance_map = false;
  c.seed = 77;
  const TrainConfig d = ParseTrainConfig(FormatTrainConfig(c));
  CHECK(FormatTrainConfig(d) == FormatTrainConfig(c));
  CHECK(d.L() == 32);
  const TrainConfig e = ParseTrainConfig("# comment\n gamma = 0.2 # trailing\n\nbpp=0.25\n");
  CHECK(e.gamma == 0.2);
  CHECK(e.bpp == 0.25);
  CHECK_THROWS_AS(ParseTrainConfig("gama=0.1\n"), InvalidArgument);
  CHECK_THROWS_AS(ParseTrainConfig("gamma\n"), InvalidArgument);
  CHECK_THROWS_AS(ParseTrainConfig("gamma=abc\n"), InvalidArgument);
}

TEST_CASE("patch loading") {
  const fs::path dir = fs::temp_directory_path() / "cwic_patch_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(5);
  auto write = [&](const std::string& name, std::size_t w, std::size_t h) {
    RawImage img{w, h, std::vector<std::uint8_t>(w * h * 3)};
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.Below(256));
    WritePpm(img, (dir / name).string());
  };
  write("a.ppm", 256, 256);
  write("b.ppm", 100, 100);
  std::vector<std::string> warnings;
  const PatchSet set = LoadPatches(dir.string(), 128, 3,
                                   [&](const std::string& w) { warnings.push_back(w); });
  CHECK(set.patches.size() == 4);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("b.ppm") != std::string::npos);
  for (const Tensor& p : set.patches) {
    CHECK(p.shape() == Shape{3, 128, 128});
    for (double v : p.vec()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  const PatchSet again = LoadPatches(dir.string(), 128, 3);
  CHECK(again.patches == set.patches);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace cwic
