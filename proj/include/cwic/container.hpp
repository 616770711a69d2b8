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

// PPM images and the CWIC compressed-stream container.
//
// CWIC layout (little-endian):
//   0  "CWIC"
//   4  u8  version (1)
//   5  u8  flags: bit0 code payload entropy-coded, bit1 importance map
//          disabled, bit2 importance payload entropy-coded
//   6  u16 width   (original, before padding)
//   8  u16 height
//  10  u8  n
//  11  u8  L
//  12  u8  n_b     importance bitplanes
//  13  u32 CRC32 of the model file the stream was produced with
//  17  u32 CRC32 of the entropy-model file (0 when no payload is
//          entropy-coded)
//  21  u32 importance payload length, then the payload
//      u32 code payload length, then the payload
// Raw payloads pack bits MSB-first in coding order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cwic/entropy.hpp"
#include "cwic/nets.hpp"
#include "cwic/quant.hpp"

namespace cwic {

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return rgb[(y * width + x) * 3 + c];
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// Binary PPM (P6), maxval 255.
RawImage ParsePpm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> SerializePpm(const RawImage& image);
RawImage ReadPpm(const std::string& path);
void WritePpm(const RawImage& image, const std::string& path);

// [1,3,H',W'] in [0,1], padded by edge replication to multiples of `multiple`.
Tensor ImageToTensor(const RawImage& image, std::size_t multiple = kDownsample);
// Rounds [0,1] samples to 8 bits and crops to width x height.
RawImage TensorToImage(const Tensor& t, std::size_t width, std::size_t height);

inline constexpr std::uint8_t kStreamVersion = 1;
inline constexpr std::uint8_t kFlagCodesEntropyCoded = 0x01;
inline constexpr std::uint8_t kFlagImportanceDisabled = 0x02;
inline constexpr std::uint8_t kFlagImportanceEntropyCoded = 0x04;
inline constexpr std::size_t kStreamHeaderBytes = 29;

struct StreamHeader {
  std::uint8_t version = kStreamVersion;
  std::uint8_t flags = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint8_t n = 0;
  std::uint8_t L = 0;
  std::uint8_t n_b = 0;
  std::uint32_t model_crc = 0;
  std::uint32_t entropy_crc = 0;

  friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

struct CompressedStream {
  StreamHeader header;
  std::vector<std::uint8_t> imp_payload;
  std::vector<std::uint8_t> code_payload;

  std::vector<std::uint8_t> Serialize() const;
  // Validates structure only (magic, version, flags, lengths).
  static CompressedStream Parse(std::span<const std::uint8_t> bytes);

  std::size_t TotalBytes() const {
    return kStreamHeaderBytes + imp_payload.size() + code_payload.size();
  }
  // 8 * total file bytes / original pixels.
  double Bpp() const;
  // Payload bits only, header excluded.
  double PayloadBpp() const;
};

struct CompressOptions {
  bool entropy_codes = true;       // else raw code payload
  bool entropy_importance = true;  // else raw importance payload
  bool importance_disabled = false;
};

struct CompressResult {
  CompressedStream stream;
  CodeBundle bundle;  // exactly what the decoder will recover
};

struct DecompressResult {
  RawImage image;
  CodeBundle bundle;
};

// Holds a model, its checksum and an optional entropy model.
class Codec {
 public:
  Codec(const ModelParams& params, const EntropyModel* entropy);

  CompressResult Compress(const RawImage& image,
                          const CompressOptions& opts = {}) const;
  DecompressResult Decompress(std::span<const std::uint8_t> bytes) const;

  // Recovers the code bundle without running the decoder network.
  CodeBundle DecodeBundle(const CompressedStream& stream) const;

  const ModelParams& params() const { return params_; }

 private:
  const ModelParams& params_;
  const EntropyModel* entropy_;
  std::uint32_t model_crc_;
  std::uint32_t entropy_crc_;
};

CompressResult Compress(const RawImage& image, const ModelParams& params,
                        const EntropyModel* entropy,
                        const CompressOptions& opts = {});
DecompressResult Decompress(std::span<const std::uint8_t> bytes,
                            const ModelParams& params,
                            const EntropyModel* entropy);

}  // namespace cwic
