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
#include <limits>
#include <string>
#include <vector>

#include "cwic/bytes.hpp"
#include "cwic/container.hpp"
#include "cwic/error.hpp"
#include "cwic/metrics.hpp"
#include "cwic/nets.hpp"
#include "cwic/random.hpp"
#include "doctest.h"

namespace cwic {
namespace {

RawImage Constant(std::size_t w, std::size_t h, std::uint8_t v) {
  return RawImage{w, h, std::vector<std::uint8_t>(w * h * 3, v)};
}

RawImage Noise(std::size_t w, std::size_t h, Rng& rng) {
  RawImage img = Constant(w, h, 0);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.Below(256));
  return img;
}

TEST_CASE("mse and psnr") {
  Rng rng(1);
  RawImage x = Noise(20, 20, rng);
  for (auto& v : x.rgb) v = static_cast<std::uint8_t>(v % 200);
  CHECK(Mse(x, x) == 0.0);
  CHECK(Psnr(x, x) == std::numeric_limits<double>::infinity());
  RawImage y = x;
  for (auto& v : y.rgb) v += 5;
  CHECK(Mse(x, y) == 25.0);
  CHECK(Psnr(x, y) == doctest::Approx(34.15).epsilon(0.01 / 34.15));
  CHECK(Psnr(x, y) == doctest::Approx(20 * std::log10(255.0 / 5)));

  RawImage board = Constant(4, 4, 0), inverse = Constant(4, 4, 255);
  for (std::size_t i = 0; i < 16; ++i) {
    if ((i / 4 + i % 4) % 2) {
      for (int c = 0; c < 3; ++c) {
        board.rgb[i * 3 + c] = 255;
        inverse.rgb[i * 3 + c] = 0;
      }
    }
  }
  CHECK(Mse(board, inverse) == 255.0 * 255.0);
  CHECK_THROWS_AS(Mse(board, Constant(4, 5, 0)), InvalidArgument);
}

TEST_CASE("psnr decreases along a noise ladder") {
  Rng rng(2);
  const RawImage x = Constant(32, 32, 128);
  double previous = std::numeric_limits<double>::infinity();
  for (int amp = 1; amp <= 100; amp += 9) {
    RawImage y = x;
    for (auto& v : y.rgb) v = static_cast<std::uint8_t>(128 + (rng.Below(2) ? amp : -amp));
    const double p = Psnr(x, y);
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("ssim") {
  Rng rng(3);
  const RawImage x = Noise(24, 20, rng);
  CHECK(Ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(Ssim(x, x) - 1.0) <= 1e-9);

  for (auto [a, b] : {std::pair{10, 200}, {0, 255}, {128, 128}, {77, 90}}) {
    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double expect = (2.0 * a * b + c1) / (double(a) * a + double(b) * b + c1);
    CHECK(std::abs(Ssim(Constant(16, 16, a), Constant(16, 16, b)) - expect) <= 1e-9);
  }

  for (int t = 0; t < 20; ++t) {
    const RawImage y = Noise(24, 20, rng);
    const double s = Ssim(x, y);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(s < 1.0 - 1e-9);
    CHECK(s == doctest::Approx(Ssim(y, x)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(Ssim(Constant(10, 30, 0), Constant(10, 30, 0)), InvalidArgument);
}

TEST_CASE("bpp") {
  CHECK(BitsPerPixel(100, 20, 10) == 4.0);
  const RDPoint p = Evaluate(Constant(16, 16, 3), Constant(16, 16, 3), 64, "a", "c");
  CHECK(p.bpp == 2.0);
  CHECK(p.psnr == std::numeric_limits<double>::infinity());

  Rng rng(4);
  const ModelParams params = InitParams(1, 64);
  const RawImage img = Noise(19, 13, rng);
  const auto bytes = Compress(img, params, nullptr, {false, false, false}).stream.Serialize();
  const auto path = std::filesystem::temp_directory_path() / "cwic_metrics_test.cwic";
  {
    std::vector<std::uint8_t> copy = bytes;
    WriteFileBytes(path.string(), copy);
  }
  const std::size_t size = std::filesystem::file_size(path);
  CHECK(BitsPerPixel(size, 19, 13) == 8.0 * size / (19.0 * 13.0));
  CHECK(CompressedStream::Parse(bytes).Bpp() == BitsPerPixel(size, 19, 13));
  std::filesystem::remove(path);
}

TEST_CASE("csv rows and means") {
  const std::vector<RDPoint> rows{{"a.ppm", "jpeg", 0.5, 10.0, 38.13, 0.9},
                                  {"b.ppm", "jpeg", 1.5, 30.0, 33.36, 0.7},
                                  {"a.ppm", "cwic", 0.25, 5.0,
                                   std::numeric_limits<double>::infinity(), 1.0}};
  const std::string csv = FormatRdCsv(rows);
  CHECK(csv.rfind(std::string(kRdCsvHeader) + "\n", 0) == 0);
  CHECK(ParseRdCsv(csv) == rows);
  CHECK(FormatRdRow(rows[0]) == "a.ppm,jpeg,0.5,10,38.13,0.9");

  const auto means = CodecMeans(rows);
  REQUIRE(means.size() == 2);
  CHECK(means[0].image == "mean");
  CHECK(means[0].codec == "jpeg");
  CHECK(means[0].bpp == 1.0);
  CHECK(means[0].mse == 20.0);
  CHECK(means[0].ssim == doctest::Approx(0.8));
  CHECK(means[1].codec == "cwic");
  CHECK_THROWS_AS(ParseRdCsv("a,b,c\n"), FormatError);
}

TEST_CASE("rd curve") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "cwic_rd_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(5);
  WritePpm(Noise(16, 16, rng), (dir / "b.ppm").string());
  WritePpm(Noise(24, 16, rng), (dir / "a.ppm").string());
  WritePpm(Noise(8, 8, rng), (dir / "tiny.ppm").string());
  {
    std::vector<std::uint8_t> junk{'P', '6', ' '};
    WriteFileBytes((dir / "broken.ppm").string(), junk);
  }
  const ModelParams m1 = InitParams(1, 64), m2 = InitParams(2, 64);
  std::vector<std::string> warnings;
  CurveOptions opts;
  opts.threads = 2;
  const auto rows = RdCurve(dir.string(), {{"g1", &m1}, {"g2", &m2}}, opts,
                            [&](const std::string& w) { warnings.push_back(w); });
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].image == "a.ppm");
  CHECK(rows[0].codec == "g1");
  CHECK(rows[1].codec == "g2");
  CHECK(rows[2].image == "b.ppm");
  CHECK(warnings.size() == 3);
  for (const RDPoint& r : rows) {
    CHECK(r.bpp > 0.0);
    CHECK(std::isfinite(r.psnr));
  }
  opts.threads = 1;
  CHECK(RdCurve(dir.string(), {{"g1", &m1}, {"g2", &m2}}, opts) == rows);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace cwic
