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

#include "cwic/container.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "cwic/bytes.hpp"
#include "cwic/error.hpp"

namespace cwic {

namespace {

constexpr char kStreamMagic[] = "CWIC";
constexpr std::uint8_t kKnownFlags =
    kFlagCodesEntropyCoded | kFlagImportanceDisabled |
    kFlagImportanceEntropyCoded;

// Every coded bit costs at least -log2(1 - 1e-4) > 1/8000 bits, which bounds
// how many bits an entropy payload of a given size can carry.
constexpr std::size_t kMaxBitsPerPayloadBit = 8000;
constexpr std::size_t kMaxPixels = std::size_t{1} << 28;

std::size_t MaxDecodableBits(std::size_t payload_bytes) {
  return (payload_bytes * 8 + 64) * kMaxBitsPerPayloadBit;
}

// Skips whitespace and '#' comments between PPM header tokens.
std::size_t SkipSpace(std::span<const std::uint8_t> b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  return pos;
}

std::size_t ReadNumber(std::span<const std::uint8_t> b, std::size_t& pos,
                       const char* field) {
  pos = SkipSpace(b, pos);
  if (pos >= b.size()) {
    throw FormatError(FormatErrorKind::kTruncated,
                      std::string("ppm: missing ") + field);
  }
  if (!std::isdigit(b[pos])) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      std::string("ppm: expected ") + field + " at offset " +
                          std::to_string(pos));
  }
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
    if (v > 1u << 20) {
      throw FormatError(FormatErrorKind::kBadHeader,
                        std::string("ppm: ") + field + " too large");
    }
    ++pos;
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// PPM

RawImage ParsePpm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    const std::string got =
        bytes.size() >= 2 ? std::string{static_cast<char>(bytes[0]),
                                        static_cast<char>(bytes[1])}
                          : std::string("<short>");
    throw FormatError(FormatErrorKind::kBadMagic,
                      "ppm: expected binary P6, got \"" + got + "\"");
  }
  std::size_t pos = 2;
  RawImage image;
  image.width = ReadNumber(bytes, pos, "width");
  image.height = ReadNumber(bytes, pos, "height");
  const std::size_t maxval = ReadNumber(bytes, pos, "maxval");
  if (maxval != 255) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "ppm: maxval " + std::to_string(maxval) +
                          " unsupported (only 255)");
  }
  if (image.width == 0 || image.height == 0) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "ppm: zero dimension " + std::to_string(image.width) +
                          "x" + std::to_string(image.height));
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError(FormatErrorKind::kTruncated,
                      "ppm: missing whitespace after header");
  }
  ++pos;
  const std::size_t need = image.width * image.height * 3;
  if (bytes.size() - pos < need) {
    throw FormatError(FormatErrorKind::kTruncated,
                      "ppm: " + std::to_string(bytes.size() - pos) +
                          " pixel bytes, expected " + std::to_string(need));
  }
  image.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return image;
}

std::vector<std::uint8_t> SerializePpm(const RawImage& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

RawImage ReadPpm(const std::string& path) { return ParsePpm(ReadFileBytes(path)); }

void WritePpm(const RawImage& image, const std::string& path) {
  WriteFileBytes(path, SerializePpm(image));
}

Tensor ImageToTensor(const RawImage& image, std::size_t multiple) {
  if (image.width == 0 || image.height == 0) {
    throw InvalidArgument("image has a zero dimension");
  }
  const std::size_t h = (image.height + multiple - 1) / multiple * multiple;
  const std::size_t w = (image.width + multiple - 1) / multiple * multiple;
  Tensor t({1, 3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = std::min(y, image.height - 1);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = std::min(x, image.width - 1);
        t.at(0, c, y, x) = image.at(sy, sx, c) / 255.0;
      }
    }
  }
  return t;
}

RawImage TensorToImage(const Tensor& t, std::size_t width, std::size_t height) {
  if (t.rank() != 4 || t.dim(1) != 3 || t.dim(2) < height || t.dim(3) < width) {
    throw InvalidArgument("cannot crop " + ShapeString(t.shape()) + " to " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
  RawImage image{width, height, std::vector<std::uint8_t>(width * height * 3)};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(t.at(0, c, y, x), 0.0, 1.0);
        image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return image;
}

// ---------------------------------------------------------------------------
// Stream

std::vector<std::uint8_t> CompressedStream::Serialize() const {
  ByteWriter out;
  out.Magic(std::string_view(kStreamMagic, 4));
  out.U8(header.version);
  out.U8(header.flags);
  out.U16(header.width);
  out.U16(header.height);
  out.U8(header.n);
  out.U8(header.L);
  out.U8(header.n_b);
  out.U32(header.model_crc);
  out.U32(header.entropy_crc);
  out.U32(static_cast<std::uint32_t>(imp_payload.size()));
  out.Raw(imp_payload);
  out.U32(static_cast<std::uint32_t>(code_payload.size()));
  out.Raw(code_payload);
  return out.Take();
}

CompressedStream CompressedStream::Parse(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "stream");
  in.ExpectMagic(std::string_view(kStreamMagic, 4));
  CompressedStream s;
  s.header.version = in.U8();
  if (s.header.version != kStreamVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion,
                      "stream: version " + std::to_string(s.header.version) +
                          ", expected " + std::to_string(kStreamVersion));
  }
  s.header.flags = in.U8();
  if (s.header.flags & ~kKnownFlags) {
    throw FormatError(FormatErrorKind::kBadHeader, "stream: unknown flag bits");
  }
  s.header.width = in.U16();
  s.header.height = in.U16();
  s.header.n = in.U8();
  s.header.L = in.U8();
  s.header.n_b = in.U8();
  s.header.model_crc = in.U32();
  s.header.entropy_crc = in.U32();
  if (s.header.width == 0 || s.header.height == 0) {
    throw FormatError(FormatErrorKind::kBadHeader, "stream: zero image dimension");
  }
  const std::uint32_t imp_len = in.U32();
  auto imp = in.Raw(imp_len);
  s.imp_payload.assign(imp.begin(), imp.end());
  const std::uint32_t code_len = in.U32();
  auto code = in.Raw(code_len);
  s.code_payload.assign(code.begin(), code.end());
  if (in.remaining() != 0) {
    throw FormatError(FormatErrorKind::kTrailingData,
                      "stream: " + std::to_string(in.remaining()) +
                          " bytes after the code payload");
  }
  return s;
}

double CompressedStream::Bpp() const {
  return 8.0 * static_cast<double>(TotalBytes()) /
         (static_cast<double>(header.width) * header.height);
}

double CompressedStream::PayloadBpp() const {
  return 8.0 * static_cast<double>(imp_payload.size() + code_payload.size()) /
         (static_cast<double>(header.width) * header.height);
}

// ---------------------------------------------------------------------------
// Codec

Codec::Codec(const ModelParams& params, const EntropyModel* entropy)
    : params_(params),
      entropy_(entropy),
      model_crc_(params.Checksum()),
      entropy_crc_(entropy ? entropy->Checksum() : 0) {}

CompressResult Codec::Compress(const RawImage& image,
                               const CompressOptions& opts) const {
  if (image.width == 0 || image.height == 0) {
    throw InvalidArgument("compress: image has a zero dimension");
  }
  if (image.width > 0xFFFF || image.height > 0xFFFF) {
    throw InvalidArgument("compress: image larger than 65535 pixels per side");
  }
  if (image.rgb.size() != image.width * image.height * 3) {
    throw InvalidArgument("compress: sample buffer does not match dimensions");
  }
  const bool importance = params_.importance_enabled && !opts.importance_disabled;

  const Tensor x = ImageToTensor(image);
  const EncodedImage enc = Encode(x, params_);
  const Tensor p = importance ? Importance(enc.features, params_) : Tensor();

  CompressResult result;
  result.bundle = MakeBundle(enc.code, p, params_.L, importance);
  const CodeBundle& b = result.bundle;

  StreamHeader& h = result.stream.header;
  h.width = static_cast<std::uint16_t>(image.width);
  h.height = static_cast<std::uint16_t>(image.height);
  h.n = static_cast<std::uint8_t>(params_.n);
  h.L = static_cast<std::uint8_t>(params_.L);
  h.n_b = static_cast<std::uint8_t>(BitplaneCount(params_.L));
  h.model_crc = model_crc_;
  if (!importance) h.flags |= kFlagImportanceDisabled;

  if (importance) {
    const BitVolume planes = BinarizeImportance(b.imp_q, params_.L);
    result.stream.imp_payload = PackBits(planes.bits());
    if (entropy_ && opts.entropy_importance) {
      auto coded = EncodeImportance(b.imp_q, params_.L, *entropy_);
      if (coded.size() <= result.stream.imp_payload.size()) {
        result.stream.imp_payload = std::move(coded);
        h.flags |= kFlagImportanceEntropyCoded;
      }
    }
  }
  result.stream.code_payload = PackScheduled(b.codes, b.mask);
  if (entropy_ && opts.entropy_codes) {
    auto coded = EncodeCodes(b.codes, b.mask, *entropy_);
    if (coded.size() <= result.stream.code_payload.size()) {
      result.stream.code_payload = std::move(coded);
      h.flags |= kFlagCodesEntropyCoded;
    }
  }
  if (h.flags & (kFlagCodesEntropyCoded | kFlagImportanceEntropyCoded)) {
    h.entropy_crc = entropy_crc_;
  }
  return result;
}

CodeBundle Codec::DecodeBundle(const CompressedStream& s) const {
  const StreamHeader& h = s.header;
  if (h.n != params_.n || h.L != params_.L) {
    throw FormatError(FormatErrorKind::kModelMismatch,
                      "stream was coded with n=" + std::to_string(h.n) +
                          " L=" + std::to_string(h.L) + ", model has n=" +
                          std::to_string(params_.n) + " L=" +
                          std::to_string(params_.L));
  }
  if (h.model_crc != model_crc_) {
    throw FormatError(FormatErrorKind::kModelMismatch,
                      "stream model checksum does not match the loaded model");
  }
  if (h.n_b != BitplaneCount(params_.L)) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "stream: n_b=" + std::to_string(h.n_b) +
                          " inconsistent with L=" + std::to_string(h.L));
  }
  const bool codes_coded = h.flags & kFlagCodesEntropyCoded;
  const bool imp_coded = h.flags & kFlagImportanceEntropyCoded;
  const bool importance = !(h.flags & kFlagImportanceDisabled);
  if (codes_coded || imp_coded) {
    if (!entropy_) {
      throw FormatError(FormatErrorKind::kModelMismatch,
                        "stream is entropy-coded but no entropy model given");
    }
    if (h.entropy_crc != entropy_crc_) {
      throw FormatError(FormatErrorKind::kModelMismatch,
                        "stream entropy-model checksum does not match");
    }
  }
  const std::size_t rows =
      (h.height + kDownsample - 1) / static_cast<std::size_t>(kDownsample);
  const std::size_t cols =
      (h.width + kDownsample - 1) / static_cast<std::size_t>(kDownsample);
  if (static_cast<std::size_t>(h.width) * h.height > kMaxPixels) {
    throw FormatError(FormatErrorKind::kBadHeader, "stream: image too large");
  }

  CodeBundle bundle;
  bundle.n = params_.n;
  bundle.L = params_.L;
  if (importance) {
    const std::size_t plane_bits = static_cast<std::size_t>(h.n_b) * rows * cols;
    if (imp_coded) {
      if (plane_bits > MaxDecodableBits(s.imp_payload.size())) {
        throw FormatError(FormatErrorKind::kBitCountMismatch,
                          "importance payload too short for the image size");
      }
      bundle.imp_q = DecodeImportance(s.imp_payload, *entropy_, rows, cols,
                                      params_.L);
    } else {
      const std::vector<std::uint8_t> bits = UnpackBits(s.imp_payload, plane_bits);
      BitVolume planes(h.n_b, rows, cols);
      planes.bits() = bits;
      bundle.imp_q = DebinarizeImportance(planes);
      for (int q : bundle.imp_q.levels) {
        if (q >= params_.L) {
          throw FormatError(FormatErrorKind::kBitCountMismatch,
                            "raw importance level " + std::to_string(q) +
                                " >= L");
        }
      }
    }
    bundle.mask = BuildMask(bundle.imp_q, params_.n, params_.L);
  } else {
    if (!s.imp_payload.empty()) {
      throw FormatError(FormatErrorKind::kBitCountMismatch,
                        "importance payload present with importance disabled");
    }
    bundle.mask = BitVolume(static_cast<std::size_t>(params_.n), rows, cols, 1);
  }
  if (codes_coded) {
    if (bundle.mask.Count() > MaxDecodableBits(s.code_payload.size())) {
      throw FormatError(FormatErrorKind::kBitCountMismatch,
                        "code payload too short for the mask's bit count");
    }
    bundle.codes = DecodeCodes(s.code_payload, bundle.mask, *entropy_);
  } else {
    bundle.codes = UnpackScheduled(s.code_payload, bundle.mask);
  }
  return bundle;
}

DecompressResult Codec::Decompress(std::span<const std::uint8_t> bytes) const {
  const CompressedStream s = CompressedStream::Parse(bytes);
  DecompressResult result;
  result.bundle = DecodeBundle(s);
  const Tensor recon = DecodeClamped(CodesToTensor(result.bundle.codes), params_);
  result.image = TensorToImage(recon, s.header.width, s.header.height);
  return result;
}

CompressResult Compress(const RawImage& image, const ModelParams& params,
                        const EntropyModel* entropy,
                        const CompressOptions& opts) {
  return Codec(params, entropy).Compress(image, opts);
}

DecompressResult Decompress(std::span<const std::uint8_t> bytes,
                            const ModelParams& params,
                            const EntropyModel* entropy) {
  return Codec(params, entropy).Decompress(bytes);
}

}  // namespace cwic
