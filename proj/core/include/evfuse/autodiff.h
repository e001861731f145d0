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

// Minimal reverse-mode differentiation over a fixed op vocabulary.
//
// A Tape records every primitive in execution order, which is a topological
// order by construction. Backward walks the tape once in reverse. Gradients
// are only propagated into nodes that depend on a leaf created with
// requires_grad, so constant inputs (images, frozen weights) cost nothing on
// the way back.

#ifndef EVFUSE_AUTODIFF_H_
#define EVFUSE_AUTODIFF_H_

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "evfuse/tensor.h"

namespace evfuse {

enum class OpKind {
  kLeaf,
  kMatMul,          // [m, k] x [k, n]
  kConv3x3,         // x [N, Ci, H, W], w [Co, Ci, 3, 3], b [Co]; stride 1, pad 1
  kAdd,             // b broadcast against a
  kMul,             // b broadcast against a
  kSoftplus,
  kLeakyRelu,
  kMean,
  kSum,
  kUpsample2x,      // nearest neighbour, [N, C, H, W] -> [N, C, 2H, 2W]
  kAvgPool2x,       // [N, C, H, W] -> [N, C, H/2, W/2]
  kConcatChannels,  // along axis 1
};

const char* OpName(OpKind kind);

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Leaf(Tensor value, bool requires_grad = false);

  Var MatMul(Var a, Var b);
  Var Conv3x3(Var x, Var weight, Var bias);
  // Broadcasting: b must have a's rank with every dim equal to a's or 1, or
  // be a single element.
  Var Add(Var a, Var b);
  Var Mul(Var a, Var b);
  Var Softplus(Var a);
  Var LeakyRelu(Var a, double slope = 0.2);
  Var Mean(Var a);
  Var Sum(Var a);
  Var Upsample2x(Var a);
  Var AvgPool2x(Var a);
  Var ConcatChannels(Var a, Var b);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::span<const std::size_t> inputs(Var v) const {
    return nodes_.at(v.id).inputs;
  }
  std::size_t size() const { return nodes_.size(); }

  // Backpropagates from a scalar output (d out / d out = 1).
  void Backward(Var output);
  // Backpropagates externally supplied upstream gradients. Seeds for the same
  // node accumulate.
  void Backward(std::span<const std::pair<Var, Tensor>> seeds);

  // Gradient of the last backward pass; zeros for nodes it did not reach.
  Tensor grad(Var v) const;

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;  // empty until touched by Backward
    bool needs_grad = false;
    double slope = 0.0;  // LeakyRelu only
  };

  Var Push(OpKind kind, std::vector<std::size_t> inputs, Tensor value);
  void ResetGrads();
  void RunBackward();
  Tensor& GradSlot(std::size_t id);
  void BackwardNode(std::size_t id);

  std::vector<Node> nodes_;
};

// Primal kernels shared with non-recording code paths.
Tensor Conv3x3Forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor Upsample2xForward(const Tensor& x);
Tensor AvgPool2xForward(const Tensor& x);
double SoftplusValue(double x);

}  // namespace evfuse

#endif  // EVFUSE_AUTODIFF_H_
