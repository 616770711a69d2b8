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

// Rate-distortion objective and end-to-end training.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cwic/nets.hpp"
#include "cwic/optim.hpp"
#include "cwic/tensor.hpp"

namespace cwic {

struct TrainConfig {
  double gamma = 0.01;
  double bpp = 0.5;  // target rate r0
  // Explicit rate threshold r; negative derives it from bpp.
  double rate_threshold = -1.0;
  int n = 64;
  std::size_t batch_size = 4;
  std::size_t max_iters_per_stage = 10000;
  std::vector<double> lr_ladder{1e-4, 1e-5, 1e-6};
  std::uint64_t seed = 1;
  std::size_t patch_size = 128;
  bool importance_map = true;
  std::size_t plateau_window = 50;
  std::size_t plateau_patience = 3;

  int L() const { return LevelsForChannels(n); }
  // r = r0*h*w for n = 64, 0.5*r0*h*w for n = 128, with h x w the code
  // size of one patch.
  double RateThreshold() const;
};

// key=value lines, '#' comments. Unknown keys are rejected.
TrainConfig ParseTrainConfig(const std::string& text);
std::string FormatTrainConfig(const TrainConfig& config);

struct PatchSet {
  std::size_t patch_size = 0;
  std::vector<Tensor> patches;  // each [3,P,P] in [0,1]
};

// Cuts every PPM in `dir` into non-overlapping patch_size tiles and shuffles
// the tile list with `seed`. Images smaller than one tile are skipped and
// reported through `warn`.
PatchSet LoadPatches(const std::string& dir, std::size_t patch_size,
                     std::uint64_t seed,
                     const std::function<void(const std::string&)>& warn = {});

// Smooth gradients overlaid with oriented stripes and blobs.
PatchSet SyntheticPatches(std::size_t count, std::size_t patch_size,
                          std::uint64_t seed);

// Stacks the selected patches into [N,3,P,P].
Tensor MakeBatch(const PatchSet& set, std::span<const std::size_t> indices);

// Sum of squared differences (no averaging).
Var DistortionLoss(Var reconstruction, Var original);
// Per image max(sum(p) - r, 0), summed over the batch. p is [N,1,h,w].
Var RateLoss(Var importance, double r);

struct ObjectiveTerms {
  double total = 0.0;
  double distortion = 0.0;
  double rate = 0.0;        // thresholded rate loss
  double importance_sum = 0.0;  // sum of p over the batch
  long level_sum = 0;       // sum of Q(p) over the batch
};

// Objective sum_x { L_D + gamma * L_R } over `batch` [N,3,P,P]. When `grads`
// is non-null, the gradient of the total is accumulated into it.
ObjectiveTerms Objective(const Tensor& batch, const ModelParams& params,
                         const TrainConfig& config,
                         ModelParams* grads = nullptr);

void AdamStep(ModelParams& params, const ModelParams& grads, AdamState& state,
              double lr);

struct TrainStep {
  std::size_t stage;
  std::size_t iteration;  // global
  double lr;
  ObjectiveTerms terms;
};

struct TrainResult {
  ModelParams params;
  std::vector<std::size_t> stage_iterations;
  std::vector<TrainStep> history;
};

// Runs the learning-rate ladder; each stage ends at max_iters_per_stage or
// when the block-mean objective plateaus. Parameters are rounded to float
// at the end so that the result equals its saved model file.
TrainResult Train(const TrainConfig& config, const PatchSet& patches,
                  ModelParams init,
                  const std::function<void(const TrainStep&)>& on_step = {});

}  // namespace cwic
