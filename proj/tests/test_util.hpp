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

// Test-only helpers: random tensors and a central finite-difference
// gradient oracle that never touches the tape's backward closures.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cwic/random.hpp"
#include "cwic/tensor.hpp"

namespace cwic::testing {

inline Tensor RandomTensor(Shape shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.Uniform(lo, hi);
  return t;
}

// Builds a scalar graph from leaf variables.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double EvalScalar(const GraphFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.Constant(t));
  return fn(tape, vars).value().item();
}

inline std::vector<Tensor> AnalyticGrads(const GraphFn& fn,
                                         const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.Variable(t));
  Var out = fn(tape, vars);
  tape.Backward(out);
  std::vector<Tensor> grads;
  for (const Var& v : vars) grads.push_back(v.grad());
  return grads;
}

inline std::vector<Tensor> NumericGrads(const GraphFn& fn,
                                        std::vector<Tensor> inputs,
                                        double step = 1e-5) {
  std::vector<Tensor> grads;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    Tensor g(inputs[a].shape());
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double orig = inputs[a][i];
      inputs[a][i] = orig + step;
      const double up = EvalScalar(fn, inputs);
      inputs[a][i] = orig - step;
      const double down = EvalScalar(fn, inputs);
      inputs[a][i] = orig;
      g[i] = (up - down) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double RelativeError(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

// Worst relative error over all inputs.
inline double GradientCheck(const GraphFn& fn, const std::vector<Tensor>& inputs) {
  const auto analytic = AnalyticGrads(fn, inputs);
  const auto numeric = NumericGrads(fn, inputs);
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    worst = std::max(worst, RelativeError(analytic[a], numeric[a]));
  }
  return worst;
}

// Reduces a tensor-valued op to a scalar with fixed random weights, so every
// output element contributes a distinct amount.
inline Var WeightedSum(Var out, const Tensor& weights) {
  return Sum(Mul(out, out.tape()->Constant(weights)));
}

// Keeps values away from the ReLU kink so that finite differences are
// well-defined.
inline void AvoidKinks(Tensor& t, double margin = 1e-2) {
  for (double& v : t.vec()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
}

}  // namespace cwic::testing
