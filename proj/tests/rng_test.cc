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

#include "evfuse/rng.h"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"

namespace evfuse {
namespace {

TEST(CounterRngTest, SameSeedAndStreamRepeat) {
  CounterRng a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.NextU64(), b.NextU64());
}

TEST(CounterRngTest, StreamsDiffer) {
  CounterRng a(42, 0), b(42, 1), c(43, 0);
  const auto x = a.NextU64();
  EXPECT_NE(x, b.NextU64());
  EXPECT_NE(x, c.NextU64());
}

TEST(CounterRngTest, UniformRangeAndMoments) {
  CounterRng r(1);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.Uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_GT(r.UniformOpen(), 0.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
}

TEST(CounterRngTest, NormalMoments) {
  CounterRng r(2);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.Normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 4 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(CounterRngTest, GammaMean) {
  for (double shape : {0.5, 1.0, 3.0, 20.0}) {
    CounterRng r(3);
    const int n = 100000;
    double s = 0;
    for (int i = 0; i < n; ++i) s += r.Gamma(shape);
    EXPECT_NEAR(s / n, shape, 5 * std::sqrt(shape / n)) << shape;
  }
}

TEST(CounterRngTest, BelowIsInRangeAndCoversAll) {
  CounterRng r(4);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = r.Below(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(CounterRngTest, SplitIsDeterministicAndIndependent) {
  CounterRng base(5);
  CounterRng a = base.Split(1), b = base.Split(1), c = base.Split(2);
  const auto x = a.NextU64();
  EXPECT_EQ(x, b.NextU64());
  EXPECT_NE(x, c.NextU64());
}

}  // namespace
}  // namespace evfuse
