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

// Distortion metrics and rate-distortion curve rows.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cwic/container.hpp"

namespace cwic {

// Mean squared sample difference on the 0-255 scale, over all channels.
double Mse(const RawImage& x, const RawImage& y);
// 10*log10(255^2 / mse); +infinity for identical images.
double Psnr(const RawImage& x, const RawImage& y);
double PsnrFromMse(double mse);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

// Mean SSIM over all full windows of the channel-mean images. Both sides
// must be at least `window` pixels.
double Ssim(const RawImage& x, const RawImage& y, const SsimParams& p = {});

// 8 * bytes / pixels.
double BitsPerPixel(std::size_t bytes, std::size_t width, std::size_t height);

struct RDPoint {
  std::string image;
  std::string codec;
  double bpp = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;

  friend bool operator==(const RDPoint&, const RDPoint&) = default;
};

RDPoint Evaluate(const RawImage& original, const RawImage& reconstruction,
                 std::size_t stream_bytes, std::string image_id,
                 std::string codec);

inline constexpr char kRdCsvHeader[] = "image,codec,bpp,mse,psnr,ssim";

std::string FormatRdRow(const RDPoint& p);
std::string FormatRdCsv(const std::vector<RDPoint>& rows);
std::vector<RDPoint> ParseRdCsv(const std::string& text);

// One row per codec with image "mean" holding the arithmetic means of that
// codec's rows, in order of first appearance.
std::vector<RDPoint> CodecMeans(const std::vector<RDPoint>& rows);

struct CurveModel {
  std::string label;
  const ModelParams* params;
};

struct CurveOptions {
  const EntropyModel* entropy = nullptr;
  CompressOptions compress;
  std::size_t threads = 1;
};

// Compresses and decompresses every PPM in `images_dir` with every model.
// Rows are ordered by (image, codec); unreadable images are skipped and
// reported through `warn`.
std::vector<RDPoint> RdCurve(const std::string& images_dir,
                             const std::vector<CurveModel>& models,
                             const CurveOptions& options,
                             const std::function<void(const std::string&)>& warn = {});

}  // namespace cwic
