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

// Encoder, decoder and importance-map networks, their parameters and the
// CWCM model file.
//
// Encoder (input 3xHxW):
//   conv 8x8/4 pad 2 -> 128, ReLU, residual block 128
//   conv 4x4/2 pad 1 -> 256, ReLU, residual block 256 (x2)  => f(x)
//   conv 1x1 -> n, sigmoid                                   => e
// Importance net (input f(x)):
//   conv 3x3 -> 128, ReLU, conv 3x3 -> 128, ReLU, conv 1x1 -> 1, sigmoid
// Decoder (input n x H/8 x W/8):
//   conv 1x1 -> 512, ReLU, residual block 512 (x2), depth-to-space 2
//   conv 3x3 -> 256, ReLU, residual block 256, depth-to-space 4
//   conv 3x3 -> 32, ReLU, conv 3x3 -> 3 (linear)
// Residual block: relu(x + conv(relu(conv(x)))), both convs 3x3 pad 1.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cwic/tensor.hpp"

namespace cwic {

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1;
  int pad = 0;
};

struct ResidualBlock {
  ConvLayer first;
  ConvLayer second;
};

struct EncoderParams {
  ConvLayer conv1;
  ResidualBlock res1;
  ConvLayer conv2;
  ResidualBlock res2;
  ResidualBlock res3;
  ConvLayer conv3;
};

struct DecoderParams {
  ConvLayer conv1;
  ResidualBlock res1;
  ResidualBlock res2;
  ConvLayer conv2;
  ResidualBlock res3;
  ConvLayer conv3;
  ConvLayer conv4;
};

struct ImportanceParams {
  ConvLayer conv1;
  ConvLayer conv2;
  ConvLayer conv3;
};

inline constexpr int kFeatureChannels = 256;
inline constexpr int kDownsample = 8;

// Importance levels paired with each code depth.
int LevelsForChannels(int n);

struct ModelParams {
  int n = 64;   // code channels
  int L = 16;   // importance levels
  bool importance_enabled = true;
  EncoderParams encoder;
  DecoderParams decoder;
  ImportanceParams importance;

  // Layers in file order: encoder, decoder, importance net.
  std::vector<ConvLayer*> Layers();
  std::vector<const ConvLayer*> Layers() const;
  std::size_t NumParameters() const;

  // Same architecture, every array zero. Used for gradient buffers and
  // optimizer moments.
  ModelParams ZerosLike() const;

  // Rounds every parameter to the nearest float so that the value survives
  // the 32-bit model file unchanged.
  void RoundToFloat();
  // CRC32 of the serialized model file.
  std::uint32_t Checksum() const;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, values
// representable as float. n must be 64 or 128.
ModelParams InitParams(std::uint64_t seed, int n);

std::vector<std::uint8_t> SerializeModel(const ModelParams& params);
ModelParams DeserializeModel(std::span<const std::uint8_t> bytes);
void SaveModel(const ModelParams& params, const std::string& path);
ModelParams LoadModel(const std::string& path);

// When `grads` is non-null, parameters are bound as differentiable leaves
// whose gradients accumulate into the matching arrays of `grads`.
struct EncoderOutput {
  Var code;      // e = E(x), [N,n,H/8,W/8], in (0,1)
  Var features;  // f(x), [N,256,H/8,W/8]
};

EncoderOutput Encode(Tape& tape, Var x, const ModelParams& params,
                     ModelParams* grads = nullptr);
Var Importance(Tape& tape, Var features, const ModelParams& params,
               ModelParams* grads = nullptr);
Var Decode(Tape& tape, Var code, const ModelParams& params,
           ModelParams* grads = nullptr);

// Tape-free inference wrappers.
struct EncodedImage {
  Tensor code;
  Tensor features;
};
EncodedImage Encode(const Tensor& x, const ModelParams& params);
Tensor Importance(const Tensor& features, const ModelParams& params);
// Output clamped to [0,1].
Tensor DecodeClamped(const Tensor& code, const ModelParams& params);

}  // namespace cwic
