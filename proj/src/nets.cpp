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

#include "cwic/nets.hpp"

#include <algorithm>
#include <cmath>

#include "cwic/bytes.hpp"
#include "cwic/error.hpp"
#include "cwic/random.hpp"

namespace cwic {

namespace {

constexpr char kModelMagic[] = "CWCM";
constexpr std::uint8_t kModelVersion = 1;
constexpr std::uint8_t kFlagImportanceDisabled = 0x01;

ConvLayer MakeConv(int in, int out, int kernel, int stride, int pad) {
  ConvLayer layer;
  layer.weight = Tensor({static_cast<std::size_t>(out),
                         static_cast<std::size_t>(in),
                         static_cast<std::size_t>(kernel),
                         static_cast<std::size_t>(kernel)});
  layer.bias = Tensor({static_cast<std::size_t>(out)});
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

ResidualBlock MakeResidual(int channels) {
  return {MakeConv(channels, channels, 3, 1, 1),
          MakeConv(channels, channels, 3, 1, 1)};
}

// Architecture with zero-filled arrays.
ModelParams MakeArchitecture(int n) {
  if (n != 64 && n != 128) {
    throw InvalidArgument("model: n must be 64 or 128, got " +
                          std::to_string(n));
  }
  ModelParams p;
  p.n = n;
  p.L = LevelsForChannels(n);
  p.encoder.conv1 = MakeConv(3, 128, 8, 4, 2);
  p.encoder.res1 = MakeResidual(128);
  p.encoder.conv2 = MakeConv(128, 256, 4, 2, 1);
  p.encoder.res2 = MakeResidual(256);
  p.encoder.res3 = MakeResidual(256);
  p.encoder.conv3 = MakeConv(256, n, 1, 1, 0);

  p.decoder.conv1 = MakeConv(n, 512, 1, 1, 0);
  p.decoder.res1 = MakeResidual(512);
  p.decoder.res2 = MakeResidual(512);
  p.decoder.conv2 = MakeConv(128, 256, 3, 1, 1);
  p.decoder.res3 = MakeResidual(256);
  p.decoder.conv3 = MakeConv(16, 32, 3, 1, 1);
  p.decoder.conv4 = MakeConv(32, 3, 3, 1, 1);

  p.importance.conv1 = MakeConv(kFeatureChannels, 128, 3, 1, 1);
  p.importance.conv2 = MakeConv(128, 128, 3, 1, 1);
  p.importance.conv3 = MakeConv(128, 1, 1, 1, 0);
  return p;
}

template <typename Params, typename Layer>
std::vector<Layer*> CollectLayers(Params& p) {
  return {&p.encoder.conv1,        &p.encoder.res1.first,
          &p.encoder.res1.second,  &p.encoder.conv2,
          &p.encoder.res2.first,   &p.encoder.res2.second,
          &p.encoder.res3.first,   &p.encoder.res3.second,
          &p.encoder.conv3,        &p.decoder.conv1,
          &p.decoder.res1.first,   &p.decoder.res1.second,
          &p.decoder.res2.first,   &p.decoder.res2.second,
          &p.decoder.conv2,        &p.decoder.res3.first,
          &p.decoder.res3.second,  &p.decoder.conv3,
          &p.decoder.conv4,        &p.importance.conv1,
          &p.importance.conv2,     &p.importance.conv3};
}

struct BoundConv {
  Var weight;
  Var bias;
  int stride;
  int pad;
};

BoundConv Bind(Tape& tape, const ConvLayer& layer, ConvLayer* grad) {
  return {tape.Parameter(layer.weight, grad ? &grad->weight : nullptr),
          tape.Parameter(layer.bias, grad ? &grad->bias : nullptr),
          layer.stride, layer.pad};
}

Var Apply(Tape& tape, Var x, const ConvLayer& layer, ConvLayer* grad) {
  const BoundConv c = Bind(tape, layer, grad);
  return Conv2d(x, c.weight, c.bias, c.stride, c.pad);
}

Var ApplyResidual(Tape& tape, Var x, const ResidualBlock& block,
                  ResidualBlock* grad) {
  Var h = Relu(Apply(tape, x, block.first, grad ? &grad->first : nullptr));
  h = Apply(tape, h, block.second, grad ? &grad->second : nullptr);
  return Relu(Add(x, h));
}

void CheckImage(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw InvalidArgument("encode: expected [N,3,H,W] image, got " +
                          ShapeString(x.shape()));
  }
  if (x.dim(2) % kDownsample != 0 || x.dim(3) % kDownsample != 0 ||
      x.dim(2) == 0 || x.dim(3) == 0) {
    throw InvalidArgument("encode: spatial size " + ShapeString(x.shape()) +
                          " must be a positive multiple of 8");
  }
}

}  // namespace

int LevelsForChannels(int n) {
  if (n == 64) return 16;
  if (n == 128) return 32;
  throw InvalidArgument("model: n must be 64 or 128, got " + std::to_string(n));
}

std::vector<ConvLayer*> ModelParams::Layers() {
  return CollectLayers<ModelParams, ConvLayer>(*this);
}

std::vector<const ConvLayer*> ModelParams::Layers() const {
  return CollectLayers<const ModelParams, const ConvLayer>(*this);
}

std::size_t ModelParams::NumParameters() const {
  std::size_t total = 0;
  for (const ConvLayer* l : Layers()) total += l->weight.size() + l->bias.size();
  return total;
}

ModelParams ModelParams::ZerosLike() const {
  ModelParams z = MakeArchitecture(n);
  z.L = L;
  z.importance_enabled = importance_enabled;
  return z;
}

void ModelParams::RoundToFloat() {
  for (ConvLayer* l : Layers()) {
    for (Tensor* t : {&l->weight, &l->bias}) {
      for (double& v : t->vec()) v = static_cast<float>(v);
    }
  }
}

std::uint32_t ModelParams::Checksum() const {
  return Crc32(SerializeModel(*this));
}

ModelParams InitParams(std::uint64_t seed, int n) {
  ModelParams p = MakeArchitecture(n);
  Rng rng(seed);
  for (ConvLayer* l : p.Layers()) {
    const double fan_in =
        static_cast<double>(l->weight.dim(1) * l->weight.dim(2) * l->weight.dim(3));
    const double bound = 1.0 / std::sqrt(fan_in);
    for (double& w : l->weight.vec()) {
      w = static_cast<float>(rng.Uniform(-bound, bound));
    }
  }
  return p;
}

std::vector<std::uint8_t> SerializeModel(const ModelParams& params) {
  ByteWriter out;
  out.Magic(std::string_view(kModelMagic, 4));
  out.U8(kModelVersion);
  out.U8(static_cast<std::uint8_t>(params.n));
  out.U8(static_cast<std::uint8_t>(params.L));
  out.U8(params.importance_enabled ? 0 : kFlagImportanceDisabled);
  for (const ConvLayer* l : params.Layers()) {
    for (const Tensor* t : {&l->weight, &l->bias}) {
      for (double v : t->vec()) out.F32(static_cast<float>(v));
    }
  }
  return out.Take();
}

ModelParams DeserializeModel(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "model file");
  in.ExpectMagic(std::string_view(kModelMagic, 4));
  const std::uint8_t version = in.U8();
  if (version != kModelVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion,
                      "model file: version " + std::to_string(version) +
                          " at offset 4, expected " +
                          std::to_string(kModelVersion));
  }
  const int n = in.U8();
  const int levels = in.U8();
  const std::uint8_t flags = in.U8();
  if ((n != 64 && n != 128) || levels != LevelsForChannels(n)) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "model file: unsupported n=" + std::to_string(n) +
                          " L=" + std::to_string(levels) + " at offset 5");
  }
  if (flags & ~kFlagImportanceDisabled) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      "model file: unknown flags at offset 7");
  }
  ModelParams p = MakeArchitecture(n);
  p.importance_enabled = !(flags & kFlagImportanceDisabled);
  for (ConvLayer* l : p.Layers()) {
    for (Tensor* t : {&l->weight, &l->bias}) {
      for (double& v : t->vec()) v = in.F32();
    }
  }
  if (in.remaining() != 0) {
    throw FormatError(FormatErrorKind::kTrailingData,
                      "model file: " + std::to_string(in.remaining()) +
                          " unexpected bytes at offset " +
                          std::to_string(in.offset()));
  }
  return p;
}

void SaveModel(const ModelParams& params, const std::string& path) {
  WriteFileBytes(path, SerializeModel(params));
}

ModelParams LoadModel(const std::string& path) {
  return DeserializeModel(ReadFileBytes(path));
}

EncoderOutput Encode(Tape& tape, Var x, const ModelParams& params,
                     ModelParams* grads) {
  CheckImage(x.value());
  const EncoderParams& e = params.encoder;
  EncoderParams* g = grads ? &grads->encoder : nullptr;
  Var h = Relu(Apply(tape, x, e.conv1, g ? &g->conv1 : nullptr));
  h = ApplyResidual(tape, h, e.res1, g ? &g->res1 : nullptr);
  h = Relu(Apply(tape, h, e.conv2, g ? &g->conv2 : nullptr));
  h = ApplyResidual(tape, h, e.res2, g ? &g->res2 : nullptr);
  Var features = ApplyResidual(tape, h, e.res3, g ? &g->res3 : nullptr);
  Var code = Sigmoid(Apply(tape, features, e.conv3, g ? &g->conv3 : nullptr));
  return {code, features};
}

Var Importance(Tape& tape, Var features, const ModelParams& params,
               ModelParams* grads) {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[1] != static_cast<std::size_t>(kFeatureChannels)) {
    throw InvalidArgument("importance: expected [N,256,h,w] features, got " +
                          ShapeString(s));
  }
  const ImportanceParams& p = params.importance;
  ImportanceParams* g = grads ? &grads->importance : nullptr;
  Var h = Relu(Apply(tape, features, p.conv1, g ? &g->conv1 : nullptr));
  h = Relu(Apply(tape, h, p.conv2, g ? &g->conv2 : nullptr));
  return Sigmoid(Apply(tape, h, p.conv3, g ? &g->conv3 : nullptr));
}

Var Decode(Tape& tape, Var code, const ModelParams& params,
           ModelParams* grads) {
  const Shape& s = code.shape();
  if (s.size() != 4 || s[1] != static_cast<std::size_t>(params.n)) {
    throw InvalidArgument("decode: expected [N," + std::to_string(params.n) +
                          ",h,w] code, got " + ShapeString(s));
  }
  const DecoderParams& d = params.decoder;
  DecoderParams* g = grads ? &grads->decoder : nullptr;
  Var h = Relu(Apply(tape, code, d.conv1, g ? &g->conv1 : nullptr));
  h = ApplyResidual(tape, h, d.res1, g ? &g->res1 : nullptr);
  h = ApplyResidual(tape, h, d.res2, g ? &g->res2 : nullptr);
  h = DepthToSpace(h, 2);
  h = Relu(Apply(tape, h, d.conv2, g ? &g->conv2 : nullptr));
  h = ApplyResidual(tape, h, d.res3, g ? &g->res3 : nullptr);
  h = DepthToSpace(h, 4);
  h = Relu(Apply(tape, h, d.conv3, g ? &g->conv3 : nullptr));
  return Apply(tape, h, d.conv4, g ? &g->conv4 : nullptr);
}

EncodedImage Encode(const Tensor& x, const ModelParams& params) {
  Tape tape;
  EncoderOutput out = Encode(tape, tape.Constant(x), params);
  return {out.code.value(), out.features.value()};
}

Tensor Importance(const Tensor& features, const ModelParams& params) {
  Tape tape;
  return Importance(tape, tape.Constant(features), params).value();
}

Tensor DecodeClamped(const Tensor& code, const ModelParams& params) {
  Tape tape;
  Tensor out = Decode(tape, tape.Constant(code), params).value();
  for (double& v : out.vec()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace cwic
