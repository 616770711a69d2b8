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

#include "cwic/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "cwic/error.hpp"

namespace cwic {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " +
                          ShapeString(a.shape()) + " vs " +
                          ShapeString(b.shape()));
  }
}

void Require4d(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 4) {
    throw InvalidArgument(std::string(op) + ": " + what +
                          " must be 4-d, got " + ShapeString(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel;
  std::size_t out_height, out_width;
  int stride, pad;

  std::size_t col_rows() const { return in_channels * kernel * kernel; }
  std::size_t col_cols() const { return out_height * out_width; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

ConvGeometry CheckConv(const Tensor& input, const Tensor& weight,
                       const Tensor& bias, int stride, int pad) {
  Require4d(input, "conv2d", "input");
  Require4d(weight, "conv2d", "weight");
  if (weight.dim(2) != weight.dim(3)) {
    throw InvalidArgument("conv2d: kernel must be square, got " +
                          ShapeString(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw InvalidArgument("conv2d: input " + ShapeString(input.shape()) +
                          " has " + std::to_string(input.dim(1)) +
                          " channels, weight " + ShapeString(weight.shape()) +
                          " expects " + std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw InvalidArgument("conv2d: bias shape " + ShapeString(bias.shape()) +
                          " does not match weight " +
                          ShapeString(weight.shape()));
  }
  if (stride < 1 || pad < 0) {
    throw InvalidArgument("conv2d: stride must be >= 1 and pad >= 0");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = stride;
  g.pad = pad;
  const std::size_t padded_h = g.height + 2 * static_cast<std::size_t>(pad);
  const std::size_t padded_w = g.width + 2 * static_cast<std::size_t>(pad);
  if (padded_h < g.kernel || padded_w < g.kernel) {
    throw InvalidArgument("conv2d: kernel " + std::to_string(g.kernel) +
                          " larger than padded input " +
                          ShapeString(input.shape()));
  }
  g.out_height = (padded_h - g.kernel) / stride + 1;
  g.out_width = (padded_w - g.kernel) / stride + 1;
  return g;
}

// Lowers one image [Cin,H,W] to columns [Cin*k*k, Ho*Wo].
void Im2Col(const ConvGeometry& g, const double* image, double* col) {
  const auto k = static_cast<long>(g.kernel);
  const auto h = static_cast<long>(g.height);
  const auto w = static_cast<long>(g.width);
  const auto ho = static_cast<long>(g.out_height);
  const auto wo = static_cast<long>(g.out_width);
  for (long c = 0; c < static_cast<long>(g.in_channels); ++c) {
    const double* plane = image + c * h * w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (long oy = 0; oy < ho; ++oy) {
          const long iy = oy * g.stride - g.pad + ky;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          for (long ox = 0; ox < wo; ++ox) {
            const long ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of Im2Col: scatters column gradients back into an image gradient.
void Col2ImAccumulate(const ConvGeometry& g, const double* col,
                      double* image) {
  const auto k = static_cast<long>(g.kernel);
  const auto h = static_cast<long>(g.height);
  const auto w = static_cast<long>(g.width);
  const auto ho = static_cast<long>(g.out_height);
  const auto wo = static_cast<long>(g.out_width);
  for (long c = 0; c < static_cast<long>(g.in_channels); ++c) {
    double* plane = image + c * h * w;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (long oy = 0; oy < ho; ++oy) {
          const long iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + iy * w;
          const double* in = row + oy * wo;
          for (long ox = 0; ox < wo; ++ox) {
            const long ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

Tensor ConvForward(const ConvGeometry& g, const Tensor& input,
                   const Tensor& weight, const Tensor& bias) {
  Tensor out({g.batch, g.out_channels, g.out_height, g.out_width});
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const auto cols = static_cast<Eigen::Index>(g.col_cols());
  const auto cout = static_cast<Eigen::Index>(g.out_channels);
  ConstMatrixMap wmat(weight.data().data(), cout, rows);
  std::vector<double> col;
  if (!g.pointwise()) col.resize(g.col_rows() * g.col_cols());
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * g.col_cols();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* image = input.data().data() + n * in_stride;
    const double* col_ptr = image;
    if (!g.pointwise()) {
      Im2Col(g, image, col.data());
      col_ptr = col.data();
    }
    MatrixMap omat(out.data().data() + n * out_stride, cout, cols);
    omat.noalias() = wmat * ConstMatrixMap(col_ptr, rows, cols);
    for (Eigen::Index c = 0; c < cout; ++c) {
      omat.row(c).array() += bias[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

}  // namespace

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(NumElements(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != NumElements(shape_)) {
    throw InvalidArgument("tensor: " + std::to_string(data_.size()) +
                          " values for shape " + ShapeString(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw InvalidArgument("tensor: item() on shape " + ShapeString(shape_));
  }
  return data_[0];
}

void Tensor::Fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
const Tensor& Var::grad() const { return tape_->GradBuffer(*this); }

Var Tape::Push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::Constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  return Push(std::move(node));
}

Var Tape::Variable(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = true;
  return Push(std::move(node));
}

Var Tape::Parameter(const Tensor& value, Tensor* grad_sink) {
  if (grad_sink && grad_sink->shape() != value.shape()) {
    throw InvalidArgument("tape: gradient sink shape " +
                          ShapeString(grad_sink->shape()) +
                          " does not match parameter " +
                          ShapeString(value.shape()));
  }
  Node node;
  node.external = &value;
  node.grad_sink = grad_sink;
  node.requires_grad = grad_sink != nullptr;
  return Push(std::move(node));
}

Var Tape::Record(Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) {
      throw InvalidArgument("tape: input recorded on a different tape");
    }
    node.requires_grad = node.requires_grad || requires_grad(in.id_);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return Push(std::move(node));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.external ? *node.external : node.owned;
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.grad_sink ? *node.grad_sink : node.grad;
}

Tensor& Tape::GradBuffer(Var v) {
  Node& node = nodes_.at(v.id_);
  if (node.grad_sink) return *node.grad_sink;
  if (node.grad.shape() != value(v.id_).shape() || node.grad.empty()) {
    node.grad = Tensor(value(v.id_).shape(), 0.0);
  }
  return node.grad;
}

void Tape::Backward(Var root) {
  if (root.tape_ != this) {
    throw InvalidArgument("tape: backward root belongs to another tape");
  }
  if (value(root.id_).size() != 1) {
    throw InvalidArgument("tape: backward root must be scalar, got " +
                          ShapeString(value(root.id_).shape()));
  }
  GradBuffer(root).Fill(1.0);
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    // Moving the closure out guarantees it runs once even if Backward is
    // called again on the same tape.
    BackwardFn fn = std::move(node.backward);
    node.backward = nullptr;
    fn(*this, node.grad);
  }
}

// ---------------------------------------------------------------------------
// Operations

Tensor Conv2dForward(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride, int pad) {
  const ConvGeometry g = CheckConv(input, weight, bias, stride, pad);
  return ConvForward(g, input, weight, bias);
}

Var Conv2d(Var input, Var weight, Var bias, int stride, int pad) {
  Tape& tape = *input.tape();
  const ConvGeometry g =
      CheckConv(input.value(), weight.value(), bias.value(), stride, pad);
  Tensor out = ConvForward(g, input.value(), weight.value(), bias.value());
  return tape.Record(
      std::move(out), {input, weight, bias},
      [g, input, weight, bias](Tape& t, const Tensor& dy) {
        const auto rows = static_cast<Eigen::Index>(g.col_rows());
        const auto cols = static_cast<Eigen::Index>(g.col_cols());
        const auto cout = static_cast<Eigen::Index>(g.out_channels);
        const Tensor& x = input.value();
        const Tensor& w = weight.value();
        const std::size_t in_stride = g.in_channels * g.height * g.width;
        const std::size_t out_stride = g.out_channels * g.col_cols();
        std::vector<double> col;
        std::vector<double> dcol;
        if (!g.pointwise()) col.resize(g.col_rows() * g.col_cols());
        if (!g.pointwise() && input.requires_grad()) {
          dcol.resize(g.col_rows() * g.col_cols());
        }
        Tensor* dw = weight.requires_grad() ? &t.GradBuffer(weight) : nullptr;
        Tensor* db = bias.requires_grad() ? &t.GradBuffer(bias) : nullptr;
        Tensor* dx = input.requires_grad() ? &t.GradBuffer(input) : nullptr;
        for (std::size_t n = 0; n < g.batch; ++n) {
          ConstMatrixMap dymat(dy.data().data() + n * out_stride, cout, cols);
          if (db) {
            for (Eigen::Index c = 0; c < cout; ++c) {
              (*db)[static_cast<std::size_t>(c)] += dymat.row(c).sum();
            }
          }
          if (dw) {
            const double* col_ptr = x.data().data() + n * in_stride;
            if (!g.pointwise()) {
              Im2Col(g, col_ptr, col.data());
              col_ptr = col.data();
            }
            MatrixMap(dw->data().data(), cout, rows).noalias() +=
                dymat * ConstMatrixMap(col_ptr, rows, cols).transpose();
          }
          if (dx) {
            ConstMatrixMap wmat(w.data().data(), cout, rows);
            double* dimage = dx->data().data() + n * in_stride;
            if (g.pointwise()) {
              MatrixMap(dimage, rows, cols).noalias() +=
                  wmat.transpose() * dymat;
            } else {
              MatrixMap(dcol.data(), rows, cols).noalias() =
                  wmat.transpose() * dymat;
              Col2ImAccumulate(g, dcol.data(), dimage);
            }
          }
        }
      });
}

namespace {

template <typename Fwd, typename Deriv>
Var Elementwise(Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.tape()->Record(std::move(out), {x},
                          [x, deriv](Tape& t, const Tensor& dy) {
                            const Tensor& xv = x.value();
                            Tensor& dx = t.GradBuffer(x);
                            for (std::size_t i = 0; i < xv.size(); ++i) {
                              dx[i] += dy[i] * deriv(xv[i]);
                            }
                          });
}

double StableSigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var Relu(Var x) {
  return Elementwise(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var Sigmoid(Var x) {
  return Elementwise(x, StableSigmoid, [](double v) {
    const double s = StableSigmoid(v);
    return s * (1.0 - s);
  });
}

Var Scale(Var x, double factor) {
  return Elementwise(
      x, [factor](double v) { return v * factor; },
      [factor](double) { return factor; });
}

Var AddScalar(Var x, double offset) {
  return Elementwise(
      x, [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Var CustomUnit(const std::function<double(double)>& forward,
               const std::function<double(double)>& derivative, Var x) {
  return Elementwise(x, forward, derivative);
}

Var Add(Var x, Var y) {
  RequireSameShape(x.value(), y.value(), "add");
  Tensor out = x.value();
  const Tensor& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i];
  return x.tape()->Record(std::move(out), {x, y},
                          [x, y](Tape& t, const Tensor& dy) {
                            for (Var v : {x, y}) {
                              if (!v.requires_grad()) continue;
                              Tensor& g = t.GradBuffer(v);
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                g[i] += dy[i];
                              }
                            }
                          });
}

Var Mul(Var x, Var y) {
  RequireSameShape(x.value(), y.value(), "mul");
  Tensor out = x.value();
  const Tensor& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= yv[i];
  return x.tape()->Record(
      std::move(out), {x, y}, [x, y](Tape& t, const Tensor& dy) {
        const Tensor& xv = x.value();
        const Tensor& yv = y.value();
        if (x.requires_grad()) {
          Tensor& g = t.GradBuffer(x);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * yv[i];
        }
        if (y.requires_grad()) {
          Tensor& g = t.GradBuffer(y);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * xv[i];
        }
      });
}

Var Sum(Var x) {
  const Tensor& xv = x.value();
  const double total = std::accumulate(xv.vec().begin(), xv.vec().end(), 0.0);
  return x.tape()->Record(Tensor::Scalar(total), {x},
                          [x](Tape& t, const Tensor& dy) {
                            Tensor& g = t.GradBuffer(x);
                            const double s = dy[0];
                            for (double& v : g.vec()) v += s;
                          });
}

Var SquaredError(Var x, Var y) {
  RequireSameShape(x.value(), y.value(), "sq_error");
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - yv[i];
    total += d * d;
  }
  return x.tape()->Record(
      Tensor::Scalar(total), {x, y}, [x, y](Tape& t, const Tensor& dy) {
        const Tensor& xv = x.value();
        const Tensor& yv = y.value();
        const double s = 2.0 * dy[0];
        if (x.requires_grad()) {
          Tensor& g = t.GradBuffer(x);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (xv[i] - yv[i]);
        }
        if (y.requires_grad()) {
          Tensor& g = t.GradBuffer(y);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (xv[i] - yv[i]);
        }
      });
}

namespace {

void CheckBlock(const Tensor& x, int block) {
  Require4d(x, "depth_to_space", "input");
  if (block < 1) throw InvalidArgument("depth_to_space: block must be >= 1");
  const auto s2 = static_cast<std::size_t>(block * block);
  if (x.dim(1) % s2 != 0) {
    throw InvalidArgument("depth_to_space: channels " +
                          std::to_string(x.dim(1)) + " not divisible by " +
                          std::to_string(s2));
  }
}

// Calls visit(input_index, output_index) for every element of the
// depth-to-space permutation.
template <typename Visit>
void ForEachDepthToSpace(const Shape& in_shape, int block, Visit visit) {
  const std::size_t s = static_cast<std::size_t>(block);
  const std::size_t batch = in_shape[0], cin = in_shape[1];
  const std::size_t h = in_shape[2], w = in_shape[3];
  const std::size_t cout = cin / (s * s);
  const std::size_t oh = h * s, ow = w * s;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < cout; ++c) {
      for (std::size_t dy = 0; dy < s; ++dy) {
        for (std::size_t dx = 0; dx < s; ++dx) {
          const std::size_t ic = c * s * s + dy * s + dx;
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
              const std::size_t in = ((n * cin + ic) * h + y) * w + x;
              const std::size_t out =
                  ((n * cout + c) * oh + (y * s + dy)) * ow + (x * s + dx);
              visit(in, out);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor DepthToSpace(const Tensor& x, int block) {
  CheckBlock(x, block);
  const auto s = static_cast<std::size_t>(block);
  Tensor out({x.dim(0), x.dim(1) / (s * s), x.dim(2) * s, x.dim(3) * s});
  ForEachDepthToSpace(x.shape(), block, [&](std::size_t in, std::size_t o) {
    out[o] = x[in];
  });
  return out;
}

Tensor SpaceToDepth(const Tensor& y, int block) {
  Require4d(y, "space_to_depth", "input");
  if (block < 1 || y.dim(2) % static_cast<std::size_t>(block) != 0 ||
      y.dim(3) % static_cast<std::size_t>(block) != 0) {
    throw InvalidArgument("space_to_depth: spatial dims " +
                          ShapeString(y.shape()) + " not divisible by block");
  }
  const auto s = static_cast<std::size_t>(block);
  Shape in_shape{y.dim(0), y.dim(1) * s * s, y.dim(2) / s, y.dim(3) / s};
  Tensor out(in_shape);
  ForEachDepthToSpace(in_shape, block, [&](std::size_t in, std::size_t o) {
    out[in] = y[o];
  });
  return out;
}

Var DepthToSpace(Var x, int block) {
  Tensor out = DepthToSpace(x.value(), block);
  return x.tape()->Record(std::move(out), {x},
                          [x, block](Tape& t, const Tensor& dy) {
                            Tensor& g = t.GradBuffer(x);
                            ForEachDepthToSpace(
                                x.value().shape(), block,
                                [&](std::size_t in, std::size_t o) {
                                  g[in] += dy[o];
                                });
                          });
}

}  // namespace cwic
