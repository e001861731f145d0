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

#include <cmath>
#include <functional>
#include <vector>

#include "evfuse/errors.h"
#include "evfuse/parallel.h"
#include "evfuse/rng.h"
#include "gtest/gtest.h"

namespace evfuse {
namespace {

Tensor Random(const Shape& shape, CounterRng& r, double lo = -1, double hi = 1) {
  Tensor t(shape);
  for (auto& v : t.values()) v = r.Uniform(lo, hi);
  return t;
}

// Builds a scalar from the leaves: sum(f(leaves) * probe) with a fixed random
// probe, so every output element contributes a distinct weight.
using Program = std::function<Var(Tape&, const std::vector<Var>&)>;

double Evaluate(const Program& f, const std::vector<Tensor>& inputs,
                const Tensor& probe) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.Leaf(t));
  const Var out = f(tape, leaves);
  return tape.value(tape.Sum(tape.Mul(out, tape.Leaf(probe)))).values()[0];
}

// Worst relative error between the tape gradient and central differences.
double GradientError(const Program& f, std::vector<Tensor> inputs, CounterRng& r) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.Leaf(t, true));
  const Var out = f(tape, leaves);
  const Tensor probe = Random(tape.value(out).shape(), r);
  tape.Backward(tape.Sum(tape.Mul(out, tape.Leaf(probe))));
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = tape.grad(leaves[k]);
    for (std::size_t j = 0; j < inputs[k].size(); ++j) {
      const double keep = inputs[k][j];
      inputs[k][j] = keep + h;
      const double up = Evaluate(f, inputs, probe);
      inputs[k][j] = keep - h;
      const double down = Evaluate(f, inputs, probe);
      inputs[k][j] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(g[j] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

// Inputs kept away from the leaky-relu kink so the difference quotient is
// smooth on the whole stencil.
Tensor AwayFromZero(const Shape& shape, CounterRng& r) {
  Tensor t = Random(shape, r, 0.05, 1.0);
  for (auto& v : t.values()) v = r.Uniform() < 0.5 ? -v : v;
  return t;
}

TEST(AutodiffForwardTest, KnownValues) {
  Tape tape;
  const Var z = tape.Softplus(tape.Leaf(Tensor({1}, {0.0})));
  EXPECT_NEAR(tape.value(z)[0], std::log(2.0), 1e-15);
  const Var a = tape.Leaf(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  const Var b = tape.Leaf(Tensor({3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12}));
  const Tensor& ab = tape.value(tape.MatMul(a, b));
  EXPECT_EQ(ab.shape(), (Shape{2, 2}));
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += av[i * 3 + k] * bv[k * 2 + j];
      EXPECT_EQ(ab[i * 2 + j], s);
    }
  }
  const Var lr = tape.LeakyRelu(tape.Leaf(Tensor({2}, {-1.0, 2.0})));
  EXPECT_DOUBLE_EQ(tape.value(lr)[0], -0.2);
  EXPECT_EQ(tape.value(lr)[1], 2.0);
}

TEST(AutodiffForwardTest, IdentityConvolution) {
  CounterRng r(1);
  const Tensor x = Random({2, 3, 5, 4}, r);
  Tensor w({3, 3, 3, 3}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  EXPECT_EQ(Conv3x3Forward(x, w, Tensor({3}, 0.0)), x);
}

TEST(AutodiffForwardTest, ConvolutionMatchesDirectSum) {
  CounterRng r(2);
  const Tensor x = Random({1, 2, 4, 5}, r), w = Random({3, 2, 3, 3}, r),
               b = Random({3}, r);
  const Tensor y = Conv3x3Forward(x, w, b);
  for (std::size_t co = 0; co < 3; ++co) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) {
        double s = b[co];
        for (std::size_t ci = 0; ci < 2; ++ci) {
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              if (i + di < 0 || i + di >= 4 || j + dj < 0 || j + dj >= 5) continue;
              s += w[((co * 2 + ci) * 3 + di + 1) * 3 + dj + 1] * x.at(0, ci, i + di, j + dj);
            }
          }
        }
        EXPECT_NEAR(y.at(0, co, i, j), s, 1e-14);
      }
    }
  }
}

TEST(AutodiffForwardTest, ResamplingAndConcat) {
  const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor up = Upsample2xForward(x);
  EXPECT_EQ(up.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(up.at(0, 0, 1, 1), 1.0);
  EXPECT_EQ(up.at(0, 0, 3, 2), 4.0);
  EXPECT_EQ(AvgPool2xForward(up), x);
  EXPECT_EQ(AvgPool2xForward(x)[0], 2.5);
  Tape tape;
  const Var c = tape.ConcatChannels(tape.Leaf(x), tape.Leaf(Tensor({1, 2, 2, 2}, 9.0)));
  EXPECT_EQ(tape.value(c).shape(), (Shape{1, 3, 2, 2}));
  EXPECT_EQ(tape.value(c)[3], 4.0);
  EXPECT_EQ(tape.value(c)[4], 9.0);
}

TEST(AutodiffForwardTest, ShapeErrors) {
  Tape tape;
  const Var a = tape.Leaf(Tensor({2, 3}));
  EXPECT_THROW(tape.MatMul(a, a), ShapeError);
  EXPECT_THROW(tape.Add(a, tape.Leaf(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW(tape.AvgPool2x(tape.Leaf(Tensor({1, 1, 3, 4}))), ShapeError);
  EXPECT_THROW(tape.Conv3x3(tape.Leaf(Tensor({1, 2, 4, 4})), tape.Leaf(Tensor({1, 3, 3, 3})),
                            tape.Leaf(Tensor({1}))),
               ShapeError);
  EXPECT_THROW(tape.ConcatChannels(tape.Leaf(Tensor({1, 1, 2, 2})),
                                   tape.Leaf(Tensor({1, 1, 4, 4}))),
               ShapeError);
  EXPECT_THROW(tape.Backward(a), ShapeError);
}

TEST(AutodiffBackwardTest, SimpleGradients) {
  Tape tape;
  const Var x = tape.Leaf(Tensor({1}, {0.0}), true);
  tape.Backward(tape.Sum(tape.Softplus(x)));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.5);
  Tape t2;
  const Var v = t2.Leaf(Tensor({3, 2}, 0.7), true);
  const Var unused = t2.Leaf(Tensor({2}, 1.0), true);
  t2.Backward(t2.Sum(v));
  EXPECT_EQ(t2.grad(v), Tensor({3, 2}, 1.0));
  EXPECT_EQ(t2.grad(unused), Tensor({2}, 0.0));
}

TEST(AutodiffBackwardTest, SeededBackwardAccumulates) {
  Tape tape;
  const Var x = tape.Leaf(Tensor({2}, {1.0, 2.0}), true);
  const Var y = tape.Mul(x, x);
  const std::vector<std::pair<Var, Tensor>> seeds = {{y, Tensor({2}, 1.0)},
                                                     {y, Tensor({2}, 0.5)}};
  tape.Backward(seeds);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 3.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], 6.0);
}

TEST(AutodiffBackwardTest, PrimitivesMatchFiniteDifferences) {
  CounterRng r(3);
  struct Case {
    const char* name;
    Program f;
    std::vector<Shape> shapes;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Tape& t, const auto& v) { return t.MatMul(v[0], v[1]); },
       {{3, 4}, {4, 2}}},
      {"conv3x3", [](Tape& t, const auto& v) { return t.Conv3x3(v[0], v[1], v[2]); },
       {{2, 2, 4, 3}, {3, 2, 3, 3}, {3}}},
      {"add", [](Tape& t, const auto& v) { return t.Add(v[0], v[1]); },
       {{2, 3, 2, 2}, {2, 3, 2, 2}}},
      {"add_broadcast", [](Tape& t, const auto& v) { return t.Add(v[0], v[1]); },
       {{2, 3, 2, 2}, {1, 3, 1, 1}}},
      {"add_scalar", [](Tape& t, const auto& v) { return t.Add(v[0], v[1]); },
       {{2, 3}, {1}}},
      {"mul", [](Tape& t, const auto& v) { return t.Mul(v[0], v[1]); },
       {{2, 3, 2, 2}, {2, 3, 2, 2}}},
      {"mul_broadcast", [](Tape& t, const auto& v) { return t.Mul(v[0], v[1]); },
       {{2, 3, 2, 2}, {2, 1, 2, 2}}},
      {"softplus", [](Tape& t, const auto& v) { return t.Softplus(v[0]); }, {{3, 5}}},
      {"mean", [](Tape& t, const auto& v) { return t.Mean(v[0]); }, {{3, 5}}},
      {"sum", [](Tape& t, const auto& v) { return t.Sum(v[0]); }, {{3, 5}}},
      {"upsample2x", [](Tape& t, const auto& v) { return t.Upsample2x(v[0]); },
       {{1, 2, 3, 2}}},
      {"avgpool2x", [](Tape& t, const auto& v) { return t.AvgPool2x(v[0]); },
       {{2, 2, 4, 6}}},
      {"concat", [](Tape& t, const auto& v) { return t.ConcatChannels(v[0], v[1]); },
       {{2, 1, 3, 3}, {2, 2, 3, 3}}},
  };
  for (const Case& c : cases) {
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(Random(s, r));
    EXPECT_LT(GradientError(c.f, inputs, r), 1e-6) << c.name;
  }
  const Program leaky = [](Tape& t, const auto& v) { return t.LeakyRelu(v[0]); };
  EXPECT_LT(GradientError(leaky, {AwayFromZero({4, 6}, r)}, r), 1e-6) << "leaky_relu";
}

TEST(AutodiffBackwardTest, ComposedNetworkMatchesFiniteDifferences) {
  CounterRng r(4);
  const Program net = [](Tape& t, const auto& v) {
    Var h = t.LeakyRelu(t.Conv3x3(v[0], v[1], v[2]));
    Var down = t.AvgPool2x(h);
    Var up = t.Upsample2x(t.Softplus(down));
    const Var cat = t.ConcatChannels(up, t.Add(h, h));
    return t.Mean(t.Mul(cat, cat));
  };
  const std::vector<Tensor> in = {Random({1, 1, 4, 4}, r), Random({2, 1, 3, 3}, r),
                                  Random({2}, r)};
  EXPECT_LT(GradientError(net, in, r), 1e-6);
}

TEST(AutodiffDeterminismTest, ThreadCountDoesNotChangeResults) {
  CounterRng r(5);
  const Tensor x = Random({2, 4, 16, 16}, r), w = Random({6, 4, 3, 3}, r),
               b = Random({6}, r);
  auto run = [&](std::size_t threads) {
    SetThreadCount(threads);
    Tape tape;
    const Var xv = tape.Leaf(x, true), wv = tape.Leaf(w, true), bv = tape.Leaf(b, true);
    const Var y = tape.Conv3x3(xv, wv, bv);
    tape.Backward(tape.Mean(tape.Softplus(y)));
    return std::vector<Tensor>{tape.value(y), tape.grad(xv), tape.grad(wv), tape.grad(bv)};
  };
  const auto one = run(1);
  const auto four = run(4);
  SetThreadCount(1);
  EXPECT_EQ(one, four);
}

TEST(AutodiffDeterminismTest, TapesAreStructurallyIdentical) {
  auto build = [](Tape& t) {
    const Var a = t.Leaf(Tensor({1, 1, 2, 2}, 1.0), true);
    t.Sum(t.Upsample2x(t.Softplus(a)));
  };
  Tape t1, t2;
  build(t1);
  build(t2);
  ASSERT_EQ(t1.size(), t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1.kind(Var{i}), t2.kind(Var{i}));
    EXPECT_TRUE(std::ranges::equal(t1.inputs(Var{i}), t2.inputs(Var{i})));
    EXPECT_EQ(t1.value(Var{i}), t2.value(Var{i}));
  }
}

}  // namespace
}  // namespace evfuse
