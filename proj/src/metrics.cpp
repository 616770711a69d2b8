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

#include "cwic/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "cwic/error.hpp"

namespace cwic {

namespace {

void RequireSameSize(const RawImage& x, const RawImage& y, const char* op) {
  if (x.width != y.width || x.height != y.height ||
      x.rgb.size() != y.rgb.size()) {
    throw InvalidArgument(std::string(op) + ": image sizes differ (" +
                          std::to_string(x.width) + "x" +
                          std::to_string(x.height) + " vs " +
                          std::to_string(y.width) + "x" +
                          std::to_string(y.height) + ")");
  }
}

std::vector<double> ChannelMean(const RawImage& img) {
  std::vector<double> g(img.width * img.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (img.rgb[3 * i] + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
  }
  return g;
}

// Separable valid-mode filtering of a w x h plane with a 1-d kernel.
std::vector<double> FilterValid(const std::vector<double>& src, std::size_t w,
                                std::size_t h, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(ow * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += k[t] * src[y * w + x + t];
      tmp[y * ow + x] = s;
    }
  }
  std::vector<double> out(ow * oh);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += k[t] * tmp[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

std::string FormatNumber(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParseNumber(const std::string& s, int line) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "csv line " + std::to_string(line) + ": bad number \"" +
                          s + "\"");
  }
  return v;
}

}  // namespace

double Mse(const RawImage& x, const RawImage& y) {
  RequireSameSize(x, y, "mse");
  if (x.rgb.empty()) throw InvalidArgument("mse: empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < x.rgb.size(); ++i) {
    const double d = static_cast<double>(x.rgb[i]) - y.rgb[i];
    s += d * d;
  }
  return s / static_cast<double>(x.rgb.size());
}

double PsnrFromMse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double Psnr(const RawImage& x, const RawImage& y) { return PsnrFromMse(Mse(x, y)); }

double Ssim(const RawImage& x, const RawImage& y, const SsimParams& p) {
  RequireSameSize(x, y, "ssim");
  const auto win = static_cast<std::size_t>(p.window);
  if (x.width < win || x.height < win) {
    throw InvalidArgument("ssim: image " + std::to_string(x.width) + "x" +
                          std::to_string(x.height) + " smaller than the " +
                          std::to_string(win) + "-pixel window");
  }
  std::vector<double> kernel(win);
  double total = 0.0;
  const double c = (static_cast<double>(win) - 1.0) / 2.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - c;
    kernel[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    total += kernel[i];
  }
  for (double& v : kernel) v /= total;

  const std::vector<double> a = ChannelMean(x);
  const std::vector<double> b = ChannelMean(y);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const std::size_t w = x.width, h = x.height;
  const auto mu_a = FilterValid(a, w, h, kernel);
  const auto mu_b = FilterValid(b, w, h, kernel);
  const auto e_aa = FilterValid(aa, w, h, kernel);
  const auto e_bb = FilterValid(bb, w, h, kernel);
  const auto e_ab = FilterValid(ab, w, h, kernel);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

double BitsPerPixel(std::size_t bytes, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw InvalidArgument("bpp: zero-size image");
  return 8.0 * static_cast<double>(bytes) /
         (static_cast<double>(width) * static_cast<double>(height));
}

RDPoint Evaluate(const RawImage& original, const RawImage& reconstruction,
                 std::size_t stream_bytes, std::string image_id,
                 std::string codec) {
  RDPoint pt;
  pt.image = std::move(image_id);
  pt.codec = std::move(codec);
  pt.bpp = BitsPerPixel(stream_bytes, original.width, original.height);
  pt.mse = Mse(original, reconstruction);
  pt.psnr = PsnrFromMse(pt.mse);
  pt.ssim = Ssim(original, reconstruction);
  return pt;
}

std::string FormatRdRow(const RDPoint& p) {
  return p.image + "," + p.codec + "," + FormatNumber(p.bpp) + "," +
         FormatNumber(p.mse) + "," + FormatNumber(p.psnr) + "," +
         FormatNumber(p.ssim);
}

std::string FormatRdCsv(const std::vector<RDPoint>& rows) {
  std::string out = std::string(kRdCsvHeader) + "\n";
  for (const RDPoint& p : rows) out += FormatRdRow(p) + "\n";
  return out;
}

std::vector<RDPoint> ParseRdCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<RDPoint> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("image,", 0) == 0) continue;
    std::vector<std::string> f;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) f.push_back(cell);
    if (f.size() != 6) {
      throw FormatError(FormatErrorKind::kBadHeader,
                        "csv line " + std::to_string(line_no) + ": expected 6 "
                        "columns, got " + std::to_string(f.size()));
    }
    rows.push_back({f[0], f[1], ParseNumber(f[2], line_no),
                    ParseNumber(f[3], line_no), ParseNumber(f[4], line_no),
                    ParseNumber(f[5], line_no)});
  }
  return rows;
}

std::vector<RDPoint> CodecMeans(const std::vector<RDPoint>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RDPoint*>> groups;
  for (const RDPoint& r : rows) {
    if (!groups.contains(r.codec)) order.push_back(r.codec);
    groups[r.codec].push_back(&r);
  }
  std::vector<RDPoint> means;
  for (const std::string& codec : order) {
    const auto& g = groups[codec];
    RDPoint m{"mean", codec, 0, 0, 0, 0};
    for (const RDPoint* r : g) {
      m.bpp += r->bpp;
      m.mse += r->mse;
      m.psnr += r->psnr;
      m.ssim += r->ssim;
    }
    const double count = static_cast<double>(g.size());
    m.bpp /= count;
    m.mse /= count;
    m.psnr /= count;
    m.ssim /= count;
    means.push_back(m);
  }
  return means;
}

std::vector<RDPoint> RdCurve(const std::string& images_dir,
                             const std::vector<CurveModel>& models,
                             const CurveOptions& options,
                             const std::function<void(const std::string&)>& warn) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(images_dir, ec)) {
    throw IoError("not a directory: " + images_dir);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<Codec> codecs;
  codecs.reserve(models.size());
  for (const CurveModel& m : models) codecs.emplace_back(*m.params, options.entropy);

  // slots[file][model]; empty optional marks a skipped image.
  std::vector<std::vector<std::optional<RDPoint>>> slots(
      files.size(), std::vector<std::optional<RDPoint>>(models.size()));
  std::vector<std::vector<std::string>> warnings(files.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < files.size(); f = next++) {
      RawImage image;
      try {
        image = ReadPpm(files[f].string());
      } catch (const std::exception& e) {
        warnings[f].push_back("skipping " + files[f].string() + ": " + e.what());
        continue;
      }
      for (std::size_t m = 0; m < models.size(); ++m) {
        try {
          const CompressResult c = codecs[m].Compress(image, options.compress);
          const std::vector<std::uint8_t> bytes = c.stream.Serialize();
          const DecompressResult d = codecs[m].Decompress(bytes);
          slots[f][m] = Evaluate(image, d.image, bytes.size(),
                                 files[f].filename().string(), models[m].label);
        } catch (const std::exception& e) {
          warnings[f].push_back("skipping " + files[f].string() + " with " +
                                models[m].label + ": " + e.what());
        }
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, options.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<RDPoint> rows;
  for (std::size_t f = 0; f < files.size(); ++f) {
    if (warn) {
      for (const std::string& w : warnings[f]) warn(w);
    }
    for (auto& slot : slots[f]) {
      if (slot) rows.push_back(std::move(*slot));
    }
  }
  return rows;
}

}  // namespace cwic
