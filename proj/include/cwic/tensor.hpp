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

// Dense NCHW tensors and a tape-based reverse-mode autodiff with exactly the
// operations the compression networks need.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cwic {

using Shape = std::vector<std::size_t>;

std::string ShapeString(const Shape& shape);
std::size_t NumElements(const Shape& shape);

// Row-major real array. Four-dimensional tensors use (batch, channel,
// height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Scalar(double v) { return Tensor(Shape{}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-d element access.
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  double item() const;
  void Fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient accumulated by Tape::Backward (zeros if none reached this node).
  const Tensor& grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of executed operations. Backward() replays the recorded
// closures in reverse execution order, each exactly once.
class Tape {
 public:
  // Receives the gradient of the root with respect to the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Tensor value);
  Var Variable(Tensor value);
  // Leaf that aliases `value` (no copy). Gradients accumulate into
  // `grad_sink`, which must have the same shape and outlive the tape. With a
  // null sink the leaf is treated as a constant.
  Var Parameter(const Tensor& value, Tensor* grad_sink);

  // Extension point for new operations: registers `value` as the output of
  // an op over `inputs`. `backward` runs only if some input requires grad.
  Var Record(Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  // Seeds d(root)/d(root) = 1 on a scalar root and propagates.
  void Backward(Var root);

  // Gradient buffer of `v`, allocated with zeros on first use. Intended for
  // BackwardFn implementations.
  Tensor& GradBuffer(Var v);

  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    Tensor* grad_sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var Push(Node node);

  std::deque<Node> nodes_;
};

// out = conv(input, weight) + bias with zero padding.
// input [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
Var Conv2d(Var input, Var weight, Var bias, int stride, int pad);

Var Relu(Var x);
Var Sigmoid(Var x);
Var Add(Var x, Var y);
Var Mul(Var x, Var y);
Var Scale(Var x, double factor);
Var AddScalar(Var x, double offset);
// Scalar sum of all elements.
Var Sum(Var x);
// Scalar sum of squared differences.
Var SquaredError(Var x, Var y);

// [N,C,H,W] -> [N,C/s^2,sH,sW]. Output channel c at (s*y+dy, s*x+dx) reads
// input channel c*s^2 + dy*s + dx at (y,x).
Var DepthToSpace(Var x, int block);
Tensor DepthToSpace(const Tensor& x, int block);
Tensor SpaceToDepth(const Tensor& x, int block);

// Shape-preserving node: forward applies `forward` elementwise, backward
// scales the upstream gradient by `derivative` evaluated at the input.
Var CustomUnit(const std::function<double(double)>& forward,
               const std::function<double(double)>& derivative, Var x);

// Plain (tape-free) convolution, used by tests as a reference and by
// inference helpers.
Tensor Conv2dForward(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride, int pad);

}  // namespace cwic
