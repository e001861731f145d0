/*
 * Copyright 2026 The evfuse Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "evfuse/autodiff.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "evfuse/errors.h"
#include "evfuse/parallel.h"

namespace evfuse {

namespace {

void Require(bool ok, OpKind kind, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(OpName(kind)) + ": " + msg);
}

void RequireRank4(const Tensor& t, OpKind kind) {
  Require(t.rank() == 4, kind,
          "expected [N, C, H, W], got " + ShapeToString(t.shape()));
}

// Maps every flat index of `a_shape` to the flat index of the broadcast
// operand. Empty result means "same shape" (identity map).
std::vector<std::size_t> BroadcastIndex(const Shape& a_shape,
                                        const Shape& b_shape, OpKind kind) {
  if (a_shape == b_shape) return {};
  const std::size_t n = NumElements(a_shape);
  if (NumElements(b_shape) == 1) return std::vector<std::size_t>(n, 0);
  Require(a_shape.size() == b_shape.size(), kind,
          "cannot broadcast " + ShapeToString(b_shape) + " to " +
              ShapeToString(a_shape));
  const std::size_t rank = a_shape.size();
  std::vector<std::size_t> b_strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    Require(b_shape[d] == a_shape[d] || b_shape[d] == 1, kind,
            "cannot broadcast " + ShapeToString(b_shape) + " to " +
                ShapeToString(a_shape));
    b_strides[d] = b_shape[d] == 1 ? 0 : stride;
    stride *= b_shape[d];
  }
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t b_flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = b_flat;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      b_flat += b_strides[d];
      if (idx[d] < a_shape[d]) break;
      b_flat -= b_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void AddInto(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

const char* OpName(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kConv3x3: return "conv3x3";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kUpsample2x: return "upsample2x";
    case OpKind::kAvgPool2x: return "avgpool2x";
    case OpKind::kConcatChannels: return "concat_channels";
  }
  return "unknown";
}

double SoftplusValue(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Tensor Conv3x3Forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  RequireRank4(x, OpKind::kConv3x3);
  Require(w.rank() == 4 && w.dim(2) == 3 && w.dim(3) == 3 &&
              w.dim(1) == x.dim(1),
          OpKind::kConv3x3,
          "weight " + ShapeToString(w.shape()) + " incompatible with input " +
              ShapeToString(x.shape()));
  Require(b.size() == w.dim(0), OpKind::kConv3x3, "bias length mismatch");
  const std::size_t n_batch = x.dim(0), ci_n = x.dim(1), h = x.dim(2),
                    wd = x.dim(3), co_n = w.dim(0);
  Tensor y({n_batch, co_n, h, wd});
  const double* xs = x.data().data();
  const double* ws = w.data().data();
  double* ys = y.data().data();
  const std::size_t plane = h * wd;
  ParallelFor(n_batch * co_n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t task = begin; task < end; ++task) {
      const std::size_t n = task / co_n;
      const std::size_t co = task % co_n;
      double* out = ys + task * plane;
      std::fill(out, out + plane, b[co]);
      for (std::size_t ci = 0; ci < ci_n; ++ci) {
        const double* in = xs + (n * ci_n + ci) * plane;
        const double* k = ws + (co * ci_n + ci) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int dy = ky - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0;
          const std::size_t y1 = dy > 0 ? h - 1 : h;
          for (int kx = 0; kx < 3; ++kx) {
            const int dx = kx - 1;
            const double kv = k[ky * 3 + kx];
            const std::size_t x0 = dx < 0 ? 1 : 0;
            const std::size_t x1 = dx > 0 ? wd - 1 : wd;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              double* orow = out + yy * wd;
              const double* irow = in + (yy + dy) * wd + dx;
              for (std::size_t xx = x0; xx < x1; ++xx) orow[xx] += kv * irow[xx];
            }
          }
        }
      }
    }
  });
  return y;
}

Tensor Upsample2xForward(const Tensor& x) {
  RequireRank4(x, OpKind::kUpsample2x);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t yy = 0; yy < 2 * h; ++yy) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        y[(p * 2 * h + yy) * 2 * w + xx] = x[(p * h + yy / 2) * w + xx / 2];
      }
    }
  }
  return y;
}

Tensor AvgPool2xForward(const Tensor& x) {
  RequireRank4(x, OpKind::kAvgPool2x);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Require(h % 2 == 0 && w % 2 == 0, OpKind::kAvgPool2x,
          "spatial dims must be even, got " + ShapeToString(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t yy = 0; yy < oh; ++yy) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* r0 = x.data().data() + (p * h + 2 * yy) * w + 2 * xx;
        const double* r1 = r0 + w;
        y[(p * oh + yy) * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
    }
  }
  return y;
}

Var Tape::Push(OpKind kind, std::vector<std::size_t> inputs, Tensor value) {
  Node node;
  node.kind = kind;
  node.needs_grad = false;
  for (std::size_t in : inputs) node.needs_grad |= nodes_[in].needs_grad;
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::Leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::MatMul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          OpKind::kMatMul,
          ShapeToString(av.shape()) + " x " + ShapeToString(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) y[i * n + j] += a_ip * bv[p * n + j];
    }
  }
  return Push(OpKind::kMatMul, {a.id, b.id}, std::move(y));
}

Var Tape::Conv3x3(Var x, Var weight, Var bias) {
  Tensor y = Conv3x3Forward(value(x), value(weight), value(bias));
  return Push(OpKind::kConv3x3, {x.id, weight.id, bias.id}, std::move(y));
}

Var Tape::Add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const std::vector<std::size_t> map =
      BroadcastIndex(av.shape(), bv.shape(), OpKind::kAdd);
  Tensor y = av;
  if (map.empty()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[map[i]];
  }
  return Push(OpKind::kAdd, {a.id, b.id}, std::move(y));
}

Var Tape::Mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const std::vector<std::size_t> map =
      BroadcastIndex(av.shape(), bv.shape(), OpKind::kMul);
  Tensor y = av;
  if (map.empty()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[map[i]];
  }
  return Push(OpKind::kMul, {a.id, b.id}, std::move(y));
}

Var Tape::Softplus(Var a) {
  Tensor y = value(a);
  for (double& v : y.values()) v = SoftplusValue(v);
  return Push(OpKind::kSoftplus, {a.id}, std::move(y));
}

Var Tape::LeakyRelu(Var a, double slope) {
  Tensor y = value(a);
  for (double& v : y.values()) v = v > 0.0 ? v : slope * v;
  Var out = Push(OpKind::kLeakyRelu, {a.id}, std::move(y));
  nodes_[out.id].slope = slope;
  return out;
}

Var Tape::Mean(Var a) {
  return Push(OpKind::kMean, {a.id}, Tensor::Scalar(value(a).Mean()));
}

Var Tape::Sum(Var a) {
  return Push(OpKind::kSum, {a.id}, Tensor::Scalar(value(a).Sum()));
}

Var Tape::Upsample2x(Var a) {
  return Push(OpKind::kUpsample2x, {a.id}, Upsample2xForward(value(a)));
}

Var Tape::AvgPool2x(Var a) {
  return Push(OpKind::kAvgPool2x, {a.id}, AvgPool2xForward(value(a)));
}

Var Tape::ConcatChannels(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  RequireRank4(av, OpKind::kConcatChannels);
  RequireRank4(bv, OpKind::kConcatChannels);
  Require(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) &&
              av.dim(3) == bv.dim(3),
          OpKind::kConcatChannels,
          ShapeToString(av.shape()) + " vs " + ShapeToString(bv.shape()));
  const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t plane = av.dim(2) * av.dim(3);
  Tensor y({n, ca + cb, av.dim(2), av.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data().data() + i * ca * plane, ca * plane,
                &y[i * (ca + cb) * plane]);
    std::copy_n(bv.data().data() + i * cb * plane, cb * plane,
                &y[(i * (ca + cb) + ca) * plane]);
  }
  return Push(OpKind::kConcatChannels, {a.id, b.id}, std::move(y));
}

void Tape::ResetGrads() {
  for (Node& node : nodes_) node.grad = Tensor();
}

Tensor& Tape::GradSlot(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::Backward(Var output) {
  const Tensor& out = value(output);
  if (out.size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " +
                     ShapeToString(out.shape()));
  }
  ResetGrads();
  GradSlot(output.id)[0] = 1.0;
  RunBackward();
}

void Tape::Backward(std::span<const std::pair<Var, Tensor>> seeds) {
  ResetGrads();
  for (const auto& [var, seed] : seeds) {
    RequireSameShape(value(var), seed, "backward seed");
    AddInto(GradSlot(var.id), seed);
  }
  RunBackward();
}

void Tape::RunBackward() {
  for (std::size_t id = nodes_.size(); id-- > 0;) {
    Node& node = nodes_[id];
    if (node.kind == OpKind::kLeaf || !node.needs_grad || node.grad.empty()) {
      continue;
    }
    BackwardNode(id);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor(node.value.shape());
  return node.grad;
}

void Tape::BackwardNode(std::size_t id) {
  // GradSlot only touches other nodes' grad tensors, never nodes_ itself, so
  // these references stay valid.
  const Node& node = nodes_[id];
  const Tensor& gy = node.grad;
  auto wants = [&](std::size_t input_index) {
    return nodes_[node.inputs[input_index]].needs_grad;
  };

  switch (node.kind) {
    case OpKind::kLeaf:
      break;

    case OpKind::kMatMul: {
      const Tensor& a = nodes_[node.inputs[0]].value;
      const Tensor& b = nodes_[node.inputs[1]].value;
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (wants(0)) {
        Tensor& ga = GradSlot(node.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j] * b[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (wants(1)) {
        Tensor& gb = GradSlot(node.inputs[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double a_ip = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += a_ip * gy[i * n + j];
          }
      }
      break;
    }

    case OpKind::kConv3x3: {
      const Tensor& x = nodes_[node.inputs[0]].value;
      const Tensor& w = nodes_[node.inputs[1]].value;
      const std::size_t n_batch = x.dim(0), ci_n = x.dim(1), h = x.dim(2),
                        wd = x.dim(3), co_n = w.dim(0);
      const std::size_t plane = h * wd;
      const double* gys = gy.data().data();
      if (wants(2)) {
        Tensor& gb = GradSlot(node.inputs[2]);
        for (std::size_t n = 0; n < n_batch; ++n)
          for (std::size_t co = 0; co < co_n; ++co) {
            const double* g = gys + (n * co_n + co) * plane;
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += g[i];
            gb[co] += s;
          }
      }
      if (wants(1)) {
        Tensor& gw = GradSlot(node.inputs[1]);
        const double* xs = x.data().data();
        double* gws = gw.data().data();
        ParallelFor(co_n, [&](std::size_t begin, std::size_t end) {
          for (std::size_t co = begin; co < end; ++co)
            for (std::size_t n = 0; n < n_batch; ++n) {
              const double* g = gys + (n * co_n + co) * plane;
              for (std::size_t ci = 0; ci < ci_n; ++ci) {
                const double* in = xs + (n * ci_n + ci) * plane;
                double* k = gws + (co * ci_n + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                  const int dy = ky - 1;
                  const std::size_t y0 = dy < 0 ? 1 : 0;
                  const std::size_t y1 = dy > 0 ? h - 1 : h;
                  for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const std::size_t x0 = dx < 0 ? 1 : 0;
                    const std::size_t x1 = dx > 0 ? wd - 1 : wd;
                    double s = 0.0;
                    for (std::size_t yy = y0; yy < y1; ++yy) {
                      const double* grow = g + yy * wd;
                      const double* irow = in + (yy + dy) * wd + dx;
                      for (std::size_t xx = x0; xx < x1; ++xx) s += grow[xx] * irow[xx];
                    }
                    k[ky * 3 + kx] += s;
                  }
                }
              }
            }
        });
      }
      if (wants(0)) {
        Tensor& gx = GradSlot(node.inputs[0]);
        const double* ws = w.data().data();
        double* gxs = gx.data().data();
        ParallelFor(n_batch * ci_n, [&](std::size_t begin, std::size_t end) {
          for (std::size_t task = begin; task < end; ++task) {
            const std::size_t n = task / ci_n;
            const std::size_t ci = task % ci_n;
            double* gin = gxs + task * plane;
            for (std::size_t co = 0; co < co_n; ++co) {
              const double* g = gys + (n * co_n + co) * plane;
              const double* k = ws + (co * ci_n + ci) * 9;
              for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const std::size_t y0 = dy < 0 ? 1 : 0;
                const std::size_t y1 = dy > 0 ? h - 1 : h;
                for (int kx = 0; kx < 3; ++kx) {
                  const int dx = kx - 1;
                  const double kv = k[ky * 3 + kx];
                  const std::size_t x0 = dx < 0 ? 1 : 0;
                  const std::size_t x1 = dx > 0 ? wd - 1 : wd;
                  for (std::size_t yy = y0; yy < y1; ++yy) {
                    const double* grow = g + yy * wd;
                    double* irow = gin + (yy + dy) * wd + dx;
                    for (std::size_t xx = x0; xx < x1; ++xx) irow[xx] += kv * grow[xx];
                  }
                }
              }
            }
          }
        });
      }
      break;
    }

    case OpKind::kAdd:
    case OpKind::kMul: {
      const Tensor& a = nodes_[node.inputs[0]].value;
      const Tensor& b = nodes_[node.inputs[1]].value;
      const std::vector<std::size_t> map =
          BroadcastIndex(a.shape(), b.shape(), node.kind);
      auto bi = [&](std::size_t i) { return map.empty() ? i : map[i]; };
      const bool is_add = node.kind == OpKind::kAdd;
      if (wants(0)) {
        Tensor& ga = GradSlot(node.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += is_add ? gy[i] : gy[i] * b[bi(i)];
        }
      }
      if (wants(1)) {
        Tensor& gb = GradSlot(node.inputs[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          gb[bi(i)] += is_add ? gy[i] : gy[i] * a[i];
        }
      }
      break;
    }

    case OpKind::kSoftplus: {
      if (!wants(0)) break;
      const Tensor& a = nodes_[node.inputs[0]].value;
      Tensor& ga = GradSlot(node.inputs[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * Sigmoid(a[i]);
      break;
    }

    case OpKind::kLeakyRelu: {
      if (!wants(0)) break;
      const Tensor& a = nodes_[node.inputs[0]].value;
      Tensor& ga = GradSlot(node.inputs[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += a[i] > 0.0 ? gy[i] : node.slope * gy[i];
      }
      break;
    }

    case OpKind::kMean:
    case OpKind::kSum: {
      if (!wants(0)) break;
      Tensor& ga = GradSlot(node.inputs[0]);
      const double g = node.kind == OpKind::kSum
                           ? gy[0]
                           : gy[0] / static_cast<double>(ga.size());
      for (double& v : ga.values()) v += g;
      break;
    }

    case OpKind::kUpsample2x: {
      if (!wants(0)) break;
      Tensor& ga = GradSlot(node.inputs[0]);
      const std::size_t planes = ga.dim(0) * ga.dim(1), h = ga.dim(2),
                        w = ga.dim(3);
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t yy = 0; yy < 2 * h; ++yy)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            ga[(p * h + yy / 2) * w + xx / 2] += gy[(p * 2 * h + yy) * 2 * w + xx];
      break;
    }

    case OpKind::kAvgPool2x: {
      if (!wants(0)) break;
      Tensor& ga = GradSlot(node.inputs[0]);
      const std::size_t planes = ga.dim(0) * ga.dim(1), h = ga.dim(2),
                        w = ga.dim(3);
      const std::size_t oh = h / 2, ow = w / 2;
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx)
            ga[(p * h + yy) * w + xx] += 0.25 * gy[(p * oh + yy / 2) * ow + xx / 2];
      break;
    }

    case OpKind::kConcatChannels: {
      const Tensor& a = nodes_[node.inputs[0]].value;
      const Tensor& b = nodes_[node.inputs[1]].value;
      const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
      const std::size_t plane = a.dim(2) * a.dim(3);
      if (wants(0)) {
        Tensor& ga = GradSlot(node.inputs[0]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < ca * plane; ++j)
            ga[i * ca * plane + j] += gy[i * (ca + cb) * plane + j];
      }
      if (wants(1)) {
        Tensor& gb = GradSlot(node.inputs[1]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < cb * plane; ++j)
            gb[i * cb * plane + j] += gy[(i * (ca + cb) + ca) * plane + j];
      }
      break;
    }
  }
}

}  // namespace evfuse
