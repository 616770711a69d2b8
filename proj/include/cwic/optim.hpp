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

// ADAM optimizer and the plateau rule used to end learning-rate stages.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cwic {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators, one buffer per parameter array.
struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  long step = 0;
};

// One bias-corrected ADAM update over parallel lists of parameter and
// gradient arrays. The state is sized on first use.
void AdamStep(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads,
              AdamState& state, double lr, const AdamConfig& config = {});

// Tracks block means of a loss sequence. Every `window` values the mean of
// the block is compared against the best mean so far; after `patience`
// consecutive blocks without improvement the detector reports a plateau.
class PlateauDetector {
 public:
  PlateauDetector(std::size_t window, std::size_t patience);

  // Returns true once the plateau condition has been met.
  bool Push(double value);
  bool plateaued() const { return stale_checks_ >= patience_; }
  std::size_t checks() const { return checks_; }

 private:
  std::size_t window_;
  std::size_t patience_;
  double block_sum_ = 0.0;
  std::size_t block_count_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t stale_checks_ = 0;
  std::size_t checks_ = 0;
};

}  // namespace cwic
