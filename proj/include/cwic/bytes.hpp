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

// Little-endian byte serialization helpers and CRC32.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cwic {

class ByteWriter {
 public:
  void U8(std::uint8_t v) { bytes_.push_back(v); }
  void U16(std::uint16_t v);
  void U32(std::uint32_t v);
  void F32(float v);
  void Raw(std::span<const std::uint8_t> data);
  void Magic(std::string_view magic);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> Take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader. Running past the end throws FormatError(kTruncated)
// naming `what` and the offset.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::uint8_t U8();
  std::uint16_t U16();
  std::uint32_t U32();
  float F32();
  std::span<const std::uint8_t> Raw(std::size_t n);
  // Throws kBadMagic if the next bytes differ from `magic`.
  void ExpectMagic(std::string_view magic);

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }

 private:
  void Need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t offset_ = 0;
};

std::uint32_t Crc32(std::span<const std::uint8_t> data);

std::vector<std::uint8_t> ReadFileBytes(const std::string& path);
void WriteFileBytes(const std::string& path,
                    std::span<const std::uint8_t> data);

}  // namespace cwic
