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

#include "cwic/bytes.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cwic/error.hpp"

namespace cwic {

void ByteWriter::U16(std::uint16_t v) {
  U8(static_cast<std::uint8_t>(v & 0xff));
  U8(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::U32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) U8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::F32(float v) { U32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::Raw(std::span<const std::uint8_t> data) {
  bytes_.insert(bytes_.end(), data.begin(), data.end());
}

void ByteWriter::Magic(std::string_view magic) {
  for (char c : magic) U8(static_cast<std::uint8_t>(c));
}

void ByteReader::Need(std::size_t n) const {
  if (n > remaining()) {
    throw FormatError(FormatErrorKind::kTruncated,
                      what_ + ": need " + std::to_string(n) +
                          " bytes at offset " + std::to_string(offset_) +
                          ", only " + std::to_string(remaining()) + " left");
  }
}

std::uint8_t ByteReader::U8() {
  Need(1);
  return data_[offset_++];
}

std::uint16_t ByteReader::U16() {
  Need(2);
  const auto v = static_cast<std::uint16_t>(data_[offset_] |
                                            (data_[offset_ + 1] << 8));
  offset_ += 2;
  return v;
}

std::uint32_t ByteReader::U32() {
  Need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(data_[offset_ + i]) << (8 * i);
  }
  offset_ += 4;
  return v;
}

float ByteReader::F32() { return std::bit_cast<float>(U32()); }

std::span<const std::uint8_t> ByteReader::Raw(std::size_t n) {
  Need(n);
  auto out = data_.subspan(offset_, n);
  offset_ += n;
  return out;
}

void ByteReader::ExpectMagic(std::string_view magic) {
  if (remaining() < magic.size() ||
      std::memcmp(data_.data() + offset_, magic.data(), magic.size()) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic,
                      what_ + ": expected magic \"" + std::string(magic) +
                          "\" at offset " + std::to_string(offset_));
  }
  offset_ += magic.size();
}

std::uint32_t Crc32(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < data.size()) {
    const std::size_t chunk = std::min<std::size_t>(data.size() - pos, 1u << 30);
    crc = crc32(crc, data.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path);
  return bytes;
}

void WriteFileBytes(const std::string& path,
                    std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed on " + path);
}

}  // namespace cwic
