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

#include "evfuse/calibration.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "evfuse/errors.h"
#include "evfuse/metrics.h"
#include "evfuse/rng.h"
#include "gtest/gtest.h"

namespace evfuse {
namespace {

// Brute-force isotonic regression: repeatedly merges the first violating pair
// of blocks until none remain.
std::vector<double> NaivePava(const std::vector<double>& y,
                              const std::vector<double>& w) {
  struct Block {
    double sum, weight;
    std::size_t len;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < y.size(); ++i) blocks.push_back({y[i] * w[i], w[i], 1});
  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
      if (blocks[i].sum / blocks[i].weight > blocks[i + 1].sum / blocks[i + 1].weight) {
        blocks[i].sum += blocks[i + 1].sum;
        blocks[i].weight += blocks[i + 1].weight;
        blocks[i].len += blocks[i + 1].len;
        blocks.erase(blocks.begin() + i + 1);
        merged = true;
        break;
      }
    }
  }
  std::vector<double> out;
  for (const Block& b : blocks) out.insert(out.end(), b.len, b.sum / b.weight);
  return out;
}

TEST(RecalibrationMapTest, EndpointsAndInterpolation) {
  const RecalibrationMap r({{0.5, 0.25}});
  EXPECT_EQ(r(0.0), 0.0);
  EXPECT_EQ(r(1.0), 1.0);
  EXPECT_DOUBLE_EQ(r(0.25), 0.125);
  EXPECT_DOUBLE_EQ(r(0.75), 0.625);
  EXPECT_EQ(r(-1.0), 0.0);
  EXPECT_EQ(r(2.0), 1.0);
  EXPECT_EQ(RecalibrationMap::Identity()(0.3), 0.3);
}

TEST(RecalibrationMapTest, RejectsInvalidKnots) {
  EXPECT_THROW(RecalibrationMap({{0.5, 0.4}, {0.5, 0.6}}), ConstraintError);
  EXPECT_THROW(RecalibrationMap({{0.3, 0.6}, {0.5, 0.4}}), ConstraintError);
  EXPECT_THROW(RecalibrationMap({{1.5, 0.4}}), ConstraintError);
}

TEST(RecalibrationMapTest, InverseComposesToIdentity) {
  const RecalibrationMap r({{0.2, 0.1}, {0.5, 0.6}, {0.8, 0.7}});
  const RecalibrationMap inv = r.Inverse();
  for (double p = 0.0; p <= 1.0; p += 0.01) EXPECT_NEAR(inv(r(p)), p, 1e-12);
  // A flat run collapses to its mean input.
  const RecalibrationMap flat({{0.2, 0.5}, {0.4, 0.5}});
  EXPECT_NEAR(flat.Inverse()(0.5), 0.3, 1e-12);
}

TEST(RecalibrationMapTest, CsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "evfuse_recal_test.csv";
  const RecalibrationMap r({{0.1, 0.05}, {0.4, 0.5}, {0.9, 0.93}});
  r.WriteCsv(path);
  EXPECT_EQ(RecalibrationMap::ReadCsv(path).knots(), r.knots());
  std::ofstream(path) << "x,y\n0.1,0.2\n";
  EXPECT_THROW(RecalibrationMap::ReadCsv(path), FormatError);
  std::ofstream(path) << "p_in,p_out\n0.1;0.2\n";
  EXPECT_THROW(RecalibrationMap::ReadCsv(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(RecalibrationMap::ReadCsv(path), IoError);
}

TEST(QuadratureConfigTest, Nodes) {
  const QuadratureConfig q(9);
  EXPECT_DOUBLE_EQ(q.node(1), 0.5 / 9);
  EXPECT_DOUBLE_EQ(q.node(5), 0.5);
  EXPECT_DOUBLE_EQ(q.weight(), 1.0 / 9);
  EXPECT_THROW(QuadratureConfig(8), ConstraintError);
  EXPECT_THROW(QuadratureConfig(7), ConstraintError);
  EXPECT_EQ(QuadratureConfig().n_nodes(), 199u);
}

TEST(PitValuesTest, BasicsAndErrors) {
  const std::vector<StudentTPredictive> t = {StudentTPredictive(1, 2, 3),
                                             StudentTPredictive(0, 1, 5)};
  const std::vector<double> y = {1.0, 1e12};
  const std::vector<double> pit = PitValues(t, y);
  EXPECT_NEAR(pit[0], 0.5, 1e-15);
  EXPECT_NEAR(pit[1], 1.0, 1e-12);
  EXPECT_THROW(PitValues(t, std::vector<double>{1.0}), ShapeError);
  EXPECT_THROW(PitValues(std::span(t).first(1), std::span(y).first(1)), DomainError);
}

TEST(PitValuesTest, UniformForSamplesFromThePredictive) {
  CounterRng r(3);
  const std::size_t n = 100000;
  std::vector<StudentTPredictive> preds;
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    const StudentTPredictive t(r.Uniform(-2, 2), r.Uniform(0.2, 3), r.Uniform(2.5, 20));
    // Student-t draw: normal over sqrt(chi^2 / dof).
    const double chi2 = 2.0 * r.Gamma(t.dof() / 2.0);
    y.push_back(t.location() + t.scale() * r.Normal() / std::sqrt(chi2 / t.dof()));
    preds.push_back(t);
  }
  std::vector<double> pit = PitValues(preds, y);
  std::sort(pit.begin(), pit.end());
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d = std::max({d, (i + 1.0) / n - pit[i], pit[i] - static_cast<double>(i) / n});
  }
  EXPECT_LT(d, 1.628 / std::sqrt(static_cast<double>(n)));  // KS, 1% level
}

TEST(PoolAdjacentViolatorsTest, MatchesBruteForce) {
  CounterRng r(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + r.Below(40);
    std::vector<double> y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = r.Uniform(0, 1) + 0.02 * i;
      w[i] = 1.0 + r.Below(3);
    }
    const std::vector<double> got = PoolAdjacentViolators(y, w);
    const std::vector<double> ref = NaivePava(y, w);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(FitIsotonicTest, UniformQuantilesGiveIdentity) {
  const std::size_t n = 99;
  std::vector<double> pit;
  for (std::size_t i = 1; i <= n; ++i) pit.push_back(i / (n + 1.0));
  const RecalibrationMap r = FitIsotonic(pit);
  for (int i = 0; i <= 1000; ++i) {
    const double p = i / 1000.0;
    EXPECT_LT(std::abs(r(p) - p), 2.0 / (n + 1));
  }
}

TEST(FitIsotonicTest, ClusteredValuesMakeSteepMap) {
  CounterRng rng(5);
  std::vector<double> pit;
  for (int i = 0; i < 200; ++i) pit.push_back(0.88 + 0.04 * rng.Uniform());
  for (int i = 0; i < 20; ++i) pit.push_back(rng.Uniform());
  const RecalibrationMap r = FitIsotonic(pit);
  std::size_t below = 0;
  for (double v : pit) below += v <= 0.9;
  EXPECT_NEAR(r(0.9), static_cast<double>(below) / pit.size(), 0.03);
  EXPECT_GT(r(0.92) - r(0.88), 0.8);
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = r(i / 1000.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_EQ(r(0.0), 0.0);
  EXPECT_EQ(r(1.0), 1.0);
}

TEST(FitIsotonicTest, Errors) {
  EXPECT_THROW(FitIsotonic(std::vector<double>{0.5}), DomainError);
  EXPECT_THROW(FitIsotonic(std::vector<double>{0.5, 1.5}), DomainError);
}

TEST(CalibratedQuantileTest, IdentityAndRoundTrip) {
  const StudentTPredictive t(1.5, 0.7, 4);
  const RecalibrationMap id = RecalibrationMap::Identity();
  EXPECT_DOUBLE_EQ(CalibratedQuantile(t, id, 0.5), 1.5);
  for (double p : {0.01, 0.3, 0.77}) {
    EXPECT_EQ(CalibratedQuantile(t, id, p), PredictiveQuantile(t, p));
  }
  const RecalibrationMap r({{0.3, 0.1}, {0.6, 0.7}});
  double prev = -1e300;
  for (int i = 1; i < 100; ++i) {
    const double p = i / 100.0;
    const double q = CalibratedQuantile(t, r, p);
    EXPECT_NEAR(t.Cdf(q), r(p), 1e-9);
    EXPECT_GE(q, prev);
    prev = q;
  }
  EXPECT_THROW(CalibratedQuantile(t, r, 0.0), DomainError);
  EXPECT_THROW(CalibratedQuantile(t, r, 1.0), DomainError);
}

TEST(CalibratedQuantileTest, CompressingMapNarrowsQuantiles) {
  const StudentTPredictive t(0, 1, 5);
  const RecalibrationMap shrink({{0.1, 0.3}, {0.9, 0.7}});
  EXPECT_LT(CalibratedQuantile(t, shrink, 0.9), PredictiveQuantile(t, 0.9));
}

TEST(CalibratedQuantileTest, SaturatedMapClampsToExtremeNodes) {
  const StudentTPredictive t(0, 1, 5);
  const QuadratureConfig q(199);
  const RecalibrationMap hard({{0.2, 0.0}, {0.8, 1.0}});
  EXPECT_DOUBLE_EQ(CalibratedQuantile(t, hard, 0.1, q), PredictiveQuantile(t, q.lowest()));
  EXPECT_DOUBLE_EQ(CalibratedQuantile(t, hard, 0.9, q), PredictiveQuantile(t, q.highest()));
}

TEST(CalibratedMomentsTest, IdentityMapAccuracy) {
  const StudentTPredictive t(0, 1, 6);
  const RecalibrationMap id = RecalibrationMap::Identity();
  const CalibratedMomentsResult m199 = CalibratedMoments(t, id, QuadratureConfig(199));
  EXPECT_NEAR(m199.mean, 0.0, 1e-3);
  EXPECT_NEAR(m199.variance / 1.5, 1.0, 0.02);
  const CalibratedMomentsResult m1999 = CalibratedMoments(t, id, QuadratureConfig(1999));
  EXPECT_LT(std::abs(m1999.variance - 1.5), std::abs(m199.variance - 1.5));
  EXPECT_NEAR(m199.variance, m199.second_moment - m199.mean * m199.mean, 1e-12);
}

// Relative variance bias of the plain midpoint rule for a dof-6 Student-t,
// computed independently with a reference t quantile function.
TEST(CalibratedMomentsTest, PlainMidpointBiasMatchesReference) {
  const StudentTPredictive t(0, 1, 6);
  const RecalibrationMap id = RecalibrationMap::Identity();
  const double v199 =
      CalibratedMoments(t, id, QuadratureConfig(199, QuadratureRule::kMidpoint)).variance;
  const double v1999 =
      CalibratedMoments(t, id, QuadratureConfig(1999, QuadratureRule::kMidpoint)).variance;
  EXPECT_NEAR(v199 / 1.5 - 1, -0.0319455599, 1e-7);
  EXPECT_NEAR(v1999 / 1.5 - 1, -0.0068681082, 1e-7);
}

TEST(CalibratedMomentsTest, ExactTailsConvergeForEveryDof) {
  const RecalibrationMap id = RecalibrationMap::Identity();
  for (double dof : {6.0, 7.0, 10.0, 30.0}) {
    const StudentTPredictive t(0.3, 2.0, dof);
    const double exact = t.Variance();
    const double e199 =
        std::abs(CalibratedMoments(t, id, QuadratureConfig(199)).variance / exact - 1);
    const double e1999 =
        std::abs(CalibratedMoments(t, id, QuadratureConfig(1999)).variance / exact - 1);
    EXPECT_LT(e1999, 5e-3) << dof;
    EXPECT_LT(e1999, e199) << dof;
    EXPECT_NEAR(CalibratedMoments(t, id, QuadratureConfig(199)).mean, 0.3, 1e-12);
  }
}

// Exact tail cells against brute-force adaptive integration of Q^2 over a
// piecewise-linear R that has knots inside both end cells. A light tail keeps
// the midpoint error of the interior cells below the tolerance.
TEST(CalibratedMomentsTest, ExactTailsMatchDenseIntegration) {
  const StudentTPredictive t(0, 1, 30);
  const RecalibrationMap r({{1e-4, 4e-5}, {3e-4, 4e-4}, {0.5, 0.55}, {0.9997, 0.9998},
                            {0.99985, 0.99995}});
  const QuadratureConfig q(1999);
  const CalibratedMomentsResult got = CalibratedMoments(t, r, q);
  // Midpoint rule on 2e6 cells with the singular end cells handled by a
  // change of variables p = s^4, which makes the integrand bounded.
  double m1 = 0.0, m2 = 0.0;
  const int n = 400000;
  for (int k = 0; k < n; ++k) {
    const double s = (k + 0.5) / n;
    const double w = 4 * s * s * s / n;
    for (double p : {s * s * s * s * 0.5, 1 - s * s * s * s * 0.5}) {
      const double v = PredictiveQuantile(t, std::clamp(r(p), 1e-300, 1 - 1e-16));
      m1 += 0.5 * w * v;
      m2 += 0.5 * w * v * v;
    }
  }
  EXPECT_NEAR(got.mean, m1, 1e-3);
  const double err = std::abs(got.second_moment / m2 - 1);
  const double plain = std::abs(
      CalibratedMoments(t, r, QuadratureConfig(1999, QuadratureRule::kMidpoint)).second_moment /
          m2 - 1);
  const double fine = std::abs(CalibratedMoments(t, r, QuadratureConfig(19999)).second_moment /
                               m2 - 1);
  EXPECT_LT(err, 2e-4);
  EXPECT_LT(err, plain / 5);
  EXPECT_LT(fine, err / 3);
}

TEST(CalibratedUncertaintyTest, ClosedFormAndRatio) {
  CounterRng r(6);
  const RecalibrationMap id = RecalibrationMap::Identity();
  const RecalibrationMap bent({{0.2, 0.05}, {0.5, 0.6}, {0.9, 0.97}});
  for (int i = 0; i < 200; ++i) {
    const NigParams p(r.Uniform(-2, 2), r.Uniform(0.1, 5), r.Uniform(3.0, 10),
                      r.Uniform(0.1, 5));
    const double exact = p.beta() * (1 + p.eta()) / (p.eta() * (p.alpha() - 1));
    const UncertaintyPair u = CalibratedUncertainty(p, id, QuadratureConfig(1999));
    EXPECT_LT(std::abs(u.epistemic / exact - 1), 5e-3);
    EXPECT_EQ(u.aleatoric, p.eta() * u.epistemic);
    const UncertaintyPair b = CalibratedUncertainty(p, bent, QuadratureConfig(199));
    EXPECT_EQ(b.aleatoric, p.eta() * b.epistemic);
  }
}

TEST(CalibratedUncertaintyTest, SteeperMapWidensVariance) {
  const NigParams p(0.2, 1.3, 4, 0.8);
  const QuadratureConfig q(199);
  // Symmetric about 0.5, pushes probabilities toward the tails.
  const RecalibrationMap wide({{0.25, 0.1}, {0.5, 0.5}, {0.75, 0.9}});
  const UncertaintyPair base = CalibratedUncertainty(p, RecalibrationMap::Identity(), q);
  const UncertaintyPair w = CalibratedUncertainty(p, wide, q);
  EXPECT_GT(w.epistemic, base.epistemic);
  EXPECT_NEAR(CalibratedMoments(Predictive(p), wide, q).mean, p.gamma(), 1e-9);
}

TEST(CalibratedUncertaintyTest, MapsMatchScalarAndKeepMedianOrder) {
  CounterRng r(7);
  const std::size_t n = 30;
  Tensor g({n}), e({n}), a({n}), b({n});
  for (std::size_t j = 0; j < n; ++j) {
    g[j] = r.Uniform(-1, 1);
    e[j] = r.Uniform(0.5, 2);
    a[j] = r.Uniform(2, 5);
    b[j] = r.Uniform(0.5, 2);
  }
  const NigParamMap m(g, e, a, b);
  const RecalibrationMap rm({{0.3, 0.2}, {0.7, 0.9}});
  const QuadratureConfig q(99);
  const UncertaintyMaps um = CalibratedUncertaintyMaps(m, rm, q);
  for (std::size_t j = 0; j < n; ++j) {
    const UncertaintyPair u = CalibratedUncertainty(m.at(j), rm, q);
    EXPECT_EQ(um.epistemic[j], u.epistemic);
    EXPECT_EQ(um.aleatoric[j], u.aleatoric);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (g[i] < g[j]) {
        EXPECT_LT(CalibratedQuantile(Predictive(m.at(i)), RecalibrationMap::Identity(), 0.5),
                  CalibratedQuantile(Predictive(m.at(j)), RecalibrationMap::Identity(), 0.5));
      }
    }
  }
  const UncertaintyMaps raw = UncalibratedUncertaintyMaps(m);
  for (std::size_t j = 0; j < n; ++j) {
    EXPECT_EQ(raw.aleatoric[j], Uncertainty(m.at(j)).aleatoric);
  }
}

// A forecaster whose predictive scales are halved is overconfident; the
// recalibration fitted on held-out draws must lower its calibration error.
TEST(CalibrationEfficacyTest, HalvedScalesAreRepaired) {
  CounterRng r(8);
  auto draw = [&](std::size_t n, std::vector<NigParams>& params, std::vector<double>& y) {
    for (std::size_t i = 0; i < n; ++i) {
      const NigParams truth(r.Uniform(-1, 1), r.Uniform(0.5, 2), r.Uniform(3, 6),
                            r.Uniform(0.2, 1));
      const StudentTPredictive t = Predictive(truth);
      const double chi2 = 2.0 * r.Gamma(t.dof() / 2.0);
      y.push_back(t.location() + t.scale() * r.Normal() / std::sqrt(chi2 / t.dof()));
      // Quarter beta halves the predictive scale.
      params.emplace_back(truth.gamma(), truth.eta(), truth.alpha(), truth.beta() / 4);
    }
  };
  std::vector<NigParams> fit_p, test_p;
  std::vector<double> fit_y, test_y;
  draw(5000, fit_p, fit_y);
  draw(5000, test_p, test_y);
  std::vector<StudentTPredictive> fit_t;
  for (const auto& p : fit_p) fit_t.push_back(Predictive(p));
  const RecalibrationMap rmap = FitIsotonic(PitValues(fit_t, fit_y));
  const QuadratureConfig q(199);
  const std::size_t n = test_p.size();
  Tensor raw({n}), cal({n}), err({n});
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = Predictive(test_p[i]).Variance();
    cal[i] = CalibratedMoments(Predictive(test_p[i]), rmap.Inverse(), q).variance;
    err[i] = (test_y[i] - test_p[i].gamma()) * (test_y[i] - test_p[i].gamma());
  }
  EXPECT_LT(Uce(cal, err).value, Uce(raw, err).value);
}

}  // namespace
}  // namespace evfuse
