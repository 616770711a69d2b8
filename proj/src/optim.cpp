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

#include "cwic/optim.hpp"

#include <Eigen/Core>

#include <cmath>

#include "cwic/error.hpp"

namespace cwic {

void AdamStep(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads,
              AdamState& state, double lr, const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw InvalidArgument("adam: parameter and gradient lists differ in length");
  }
  if (state.first.empty()) {
    state.first.resize(params.size());
    state.second.resize(params.size());
    for (std::size_t a = 0; a < params.size(); ++a) {
      state.first[a].assign(params[a].size(), 0.0);
      state.second[a].assign(params[a].size(), 0.0);
    }
  }
  if (state.first.size() != params.size()) {
    throw InvalidArgument("adam: state was built for a different parameter set");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t a = 0; a < params.size(); ++a) {
    std::span<double> p = params[a];
    std::span<const double> g = grads[a];
    std::vector<double>& m = state.first[a];
    std::vector<double>& v = state.second[a];
    if (g.size() != p.size() || m.size() != p.size()) {
      throw InvalidArgument("adam: array size mismatch");
    }
    const auto len = static_cast<Eigen::Index>(p.size());
    Eigen::Map<Eigen::ArrayXd> pa(p.data(), len);
    Eigen::Map<const Eigen::ArrayXd> ga(g.data(), len);
    Eigen::Map<Eigen::ArrayXd> ma(m.data(), len);
    Eigen::Map<Eigen::ArrayXd> va(v.data(), len);
    ma = config.beta1 * ma + (1.0 - config.beta1) * ga;
    va = config.beta2 * va + (1.0 - config.beta2) * ga.square();
    pa -= (lr / c1) * ma / ((va / c2).sqrt() + config.epsilon);
  }
}

PlateauDetector::PlateauDetector(std::size_t window, std::size_t patience)
    : window_(window), patience_(patience) {
  if (window == 0 || patience == 0) {
    throw InvalidArgument("plateau: window and patience must be positive");
  }
}

bool PlateauDetector::Push(double value) {
  block_sum_ += value;
  if (++block_count_ < window_) return plateaued();
  const double mean = block_sum_ / static_cast<double>(block_count_);
  block_sum_ = 0.0;
  block_count_ = 0;
  ++checks_;
  if (!has_best_ || mean < best_) {
    best_ = mean;
    has_best_ = true;
    stale_checks_ = 0;
  } else {
    ++stale_checks_;
  }
  return plateaued();
}

}  // namespace cwic
