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
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "evfuse/errors.h"
#include "evfuse/parallel.h"
#include "evfuse/special_functions.h"

namespace evfuse {

RecalibrationMap::RecalibrationMap(std::vector<Knot> knots)
    : knots_(std::move(knots)) {
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    const auto [in, out] = knots_[i];
    if (!(in >= 0.0 && in <= 1.0 && out >= 0.0 && out <= 1.0)) {
      throw ConstraintError("RecalibrationMap: knot outside [0,1]^2");
    }
    if (i > 0 && !(in > knots_[i - 1].first)) {
      throw ConstraintError("RecalibrationMap: p_in must be strictly increasing");
    }
    if (i > 0 && out < knots_[i - 1].second) {
      throw ConstraintError("RecalibrationMap: p_out must be nondecreasing");
    }
  }
  if (knots_.empty() || knots_.front().first > 0.0) {
    knots_.insert(knots_.begin(), {0.0, 0.0});
  }
  knots_.front().second = 0.0;
  if (knots_.back().first < 1.0) knots_.push_back({1.0, 1.0});
  knots_.back().second = 1.0;
}

RecalibrationMap RecalibrationMap::Identity() {
  return RecalibrationMap({{0.0, 0.0}, {1.0, 1.0}});
}

double RecalibrationMap::operator()(double p) const {
  if (!(p > 0.0)) return 0.0;
  if (p >= 1.0) return 1.0;
  const auto it = std::upper_bound(
      knots_.begin(), knots_.end(), p,
      [](double v, const Knot& k) { return v < k.first; });
  const Knot& hi = *it;
  const Knot& lo = *(it - 1);
  const double t = (p - lo.first) / (hi.first - lo.first);
  return std::clamp(lo.second + t * (hi.second - lo.second), 0.0, 1.0);
}

RecalibrationMap RecalibrationMap::Inverse() const {
  std::vector<Knot> swapped;
  for (std::size_t i = 0; i < knots_.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < knots_.size() && knots_[j].second == knots_[i].second) {
      sum += knots_[j].first;
      ++j;
    }
    swapped.emplace_back(knots_[i].second, sum / static_cast<double>(j - i));
    i = j;
  }
  return RecalibrationMap(std::move(swapped));
}

void RecalibrationMap::WriteCsv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "p_in,p_out\n";
  char line[80];
  for (const auto& [in, o] : knots_) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g\n", in, o);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

RecalibrationMap RecalibrationMap::ReadCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "p_in,p_out") {
    throw FormatError(path.string() + ": expected header 'p_in,p_out'");
  }
  std::vector<Knot> knots;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      knots.emplace_back(std::stod(line.substr(0, comma)),
                         std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": malformed knot '" + line + "'");
    }
  }
  return RecalibrationMap(std::move(knots));
}

QuadratureConfig::QuadratureConfig(std::size_t n_nodes, QuadratureRule rule)
    : n_nodes_(n_nodes), rule_(rule) {
  if (n_nodes < 9 || n_nodes % 2 == 0) {
    throw ConstraintError("QuadratureConfig: n_nodes must be odd and >= 9, got " +
                          std::to_string(n_nodes));
  }
}

double QuadratureConfig::node(std::size_t n) const {
  return (static_cast<double>(n) - 0.5) / static_cast<double>(n_nodes_);
}

std::vector<double> PitValues(std::span<const StudentTPredictive> preds,
                              std::span<const double> targets) {
  if (preds.size() != targets.size()) {
    throw ShapeError("PitValues: " + std::to_string(preds.size()) +
                     " predictives vs " + std::to_string(targets.size()) +
                     " targets");
  }
  if (preds.size() < 2) throw DomainError("PitValues: need >= 2 pairs");
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out[i] = preds[i].Cdf(targets[i]);
  }
  return out;
}

std::vector<double> PoolAdjacentViolators(std::span<const double> y,
                                          std::span<const double> weights) {
  if (y.size() != weights.size()) {
    throw ShapeError("PoolAdjacentViolators: size mismatch");
  }
  struct Block {
    double mean;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    blocks.push_back({y[i], weights[i], 1});
    while (blocks.size() > 1 &&
           blocks[blocks.size() - 2].mean > blocks.back().mean) {
      const Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double w = prev.weight + top.weight;
      prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / w;
      prev.weight = w;
      prev.count += top.count;
    }
  }
  std::vector<double> fitted;
  fitted.reserve(y.size());
  for (const Block& b : blocks) fitted.insert(fitted.end(), b.count, b.mean);
  return fitted;
}

RecalibrationMap FitIsotonic(std::span<const double> pit) {
  if (pit.size() < 2) throw DomainError("FitIsotonic: need >= 2 PIT values");
  std::vector<double> sorted(pit.begin(), pit.end());
  for (double v : sorted) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("FitIsotonic: PIT values must lie in [0, 1]");
    }
  }
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());

  // Collapse ties: one point per distinct PIT value carrying the empirical
  // CDF at that value and the tie count as weight.
  std::vector<double> xs, ys, ws;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    xs.push_back(sorted[i]);
    ys.push_back(static_cast<double>(j) / n);
    ws.push_back(static_cast<double>(j - i));
    i = j;
  }
  const std::vector<double> fitted = PoolAdjacentViolators(ys, ws);
  std::vector<RecalibrationMap::Knot> knots;
  knots.reserve(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    knots.emplace_back(xs[k], std::clamp(fitted[k], 0.0, 1.0));
  }
  return RecalibrationMap(std::move(knots));
}

namespace {

double ClampedProbability(double rp, const QuadratureConfig& q) {
  if (rp <= 0.0) return q.lowest();
  if (rp >= 1.0) return q.highest();
  return rp;
}

// Piece of an end cell on which R is linear: p in [a, b] maps to [ua, ub].
struct Segment {
  double a, b, ua, ub;
};

// Everything about the quadrature that depends on R but not on the pixel.
struct PreparedRule {
  std::vector<double> node_probs;  // R(p_n) for the midpoint nodes in use
  std::vector<Segment> tails;      // exact pieces of the two end cells
};

void AppendCellSegments(const RecalibrationMap& r, double lo, double hi,
                        std::vector<Segment>& out) {
  std::vector<double> cuts = {lo};
  for (const auto& [p_in, p_out] : r.knots()) {
    if (p_in > lo && p_in < hi) cuts.push_back(p_in);
  }
  cuts.push_back(hi);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    out.push_back({cuts[i], cuts[i + 1], r(cuts[i]), r(cuts[i + 1])});
  }
}

PreparedRule PrepareRule(const RecalibrationMap& r, const QuadratureConfig& q) {
  PreparedRule rule;
  const std::size_t n = q.n_nodes();
  const bool exact = q.rule() == QuadratureRule::kExactTails;
  const std::size_t first = exact ? 2 : 1;
  const std::size_t last = exact ? n - 1 : n;
  for (std::size_t k = first; k <= last; ++k) {
    rule.node_probs.push_back(ClampedProbability(r(q.node(k)), q));
  }
  if (exact) {
    AppendCellSegments(r, 0.0, q.weight(), rule.tails);
    AppendCellSegments(r, 1.0 - q.weight(), 1.0, rule.tails);
  }
  return rule;
}

// Partial moments of the standard Student-t, integral of t^k f(t) over
// (-inf, x] ("lower") or [x, inf) ("upper"), for k = 1, 2 and dof > 2.
// The second moment uses t^2 f_v(t) = K h(t) - v f_v(t), where h is the
// density of a (v - 2)-dof Student-t scaled by sqrt(v / (v - 2)) and
// K = v (v - 1) / (v - 2).
struct TailMoments {
  double m1 = 0.0;
  double m2 = 0.0;
};

TailMoments LowerMoments(double x, double dof) {
  if (x == -std::numeric_limits<double>::infinity()) return {};
  const double s = std::sqrt(dof / (dof - 2.0));
  const double k = dof * (dof - 1.0) / (dof - 2.0);
  const double f = std::exp(StandardStudentTLogPdf(x, dof));
  return {-(dof + x * x) / (dof - 1.0) * f,
          k * StandardStudentTCdf(x / s, dof - 2.0) - dof * StandardStudentTCdf(x, dof)};
}

TailMoments UpperMoments(double x, double dof) {
  const TailMoments m = LowerMoments(-x, dof);
  return {-m.m1, m.m2};
}

double TailQuantile(double u, double dof) {
  if (u <= 0.0) return -std::numeric_limits<double>::infinity();
  if (u >= 1.0) return std::numeric_limits<double>::infinity();
  return StandardStudentTQuantile(u, dof);
}

// Integral of t^k over the probability band (ua, ub] of the standard
// Student-t, using whichever tail keeps the subtraction small.
TailMoments BandMoments(double ua, double ub, double dof) {
  const double xa = TailQuantile(ua, dof), xb = TailQuantile(ub, dof);
  if (ub <= 0.5) {
    const TailMoments hi = LowerMoments(xb, dof), lo = LowerMoments(xa, dof);
    return {hi.m1 - lo.m1, hi.m2 - lo.m2};
  }
  const TailMoments a = UpperMoments(xa, dof), b = xb == std::numeric_limits<double>::infinity()
                                                      ? TailMoments{}
                                                      : UpperMoments(xb, dof);
  return {a.m1 - b.m1, a.m2 - b.m2};
}

// Standardized (location 0, scale 1) mean and variance of the calibrated
// quantile function under `rule`.
struct StandardizedMoments {
  double mean = 0.0;
  double variance = 0.0;
};

StandardizedMoments StandardizedRuleMoments(const PreparedRule& rule, double dof,
                                            const QuadratureConfig& q,
                                            std::vector<double>& std_q) {
  std_q.resize(rule.node_probs.size());
  for (std::size_t n = 0; n < rule.node_probs.size(); ++n) {
    // R(p_n) is nondecreasing in n, so repeated probabilities reuse the
    // previous solve.
    if (n > 0 && rule.node_probs[n] == rule.node_probs[n - 1]) {
      std_q[n] = std_q[n - 1];
    } else {
      std_q[n] = StandardStudentTQuantile(rule.node_probs[n], dof);
    }
  }
  // Each tail piece contributes (weight, integral of t, integral of t^2).
  struct Piece {
    double w, m1, m2;
  };
  std::vector<Piece> pieces;
  pieces.reserve(rule.tails.size());
  for (const Segment& seg : rule.tails) {
    const double width = seg.b - seg.a;
    if (seg.ub - seg.ua > 1e-12) {
      const TailMoments band = BandMoments(seg.ua, seg.ub, dof);
      const double jac = width / (seg.ub - seg.ua);
      pieces.push_back({width, jac * band.m1, jac * band.m2});
    } else {
      const double t = StandardStudentTQuantile(
          ClampedProbability(0.5 * (seg.ua + seg.ub), q), dof);
      pieces.push_back({width, width * t, width * t * t});
    }
  }
  const double dp = q.weight();
  StandardizedMoments m;
  for (double t : std_q) m.mean += t * dp;
  for (const Piece& p : pieces) m.mean += p.m1;
  // Centered form of E[Q^2] - E[Q]^2; equal in exact arithmetic but immune
  // to cancellation.
  for (double t : std_q) m.variance += (t - m.mean) * (t - m.mean) * dp;
  for (const Piece& p : pieces) {
    m.variance += p.m2 - 2.0 * m.mean * p.m1 + m.mean * m.mean * p.w;
  }
  return m;
}

CalibratedMomentsResult Scale(const StudentTPredictive& t, const StandardizedMoments& s) {
  CalibratedMomentsResult m;
  m.mean = t.location() + t.scale() * s.mean;
  m.variance = t.scale() * t.scale() * s.variance;
  m.second_moment = m.variance + m.mean * m.mean;
  return m;
}

}  // namespace

double CalibratedQuantile(const StudentTPredictive& t,
                          const RecalibrationMap& r, double prob,
                          const QuadratureConfig& q) {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw DomainError("CalibratedQuantile: probability must lie in (0, 1)");
  }
  return PredictiveQuantile(t, ClampedProbability(r(prob), q));
}

CalibratedMomentsResult CalibratedMoments(const StudentTPredictive& t,
                                          const RecalibrationMap& r,
                                          const QuadratureConfig& q) {
  std::vector<double> std_q;
  return Scale(t, StandardizedRuleMoments(PrepareRule(r, q), t.dof(), q, std_q));
}

UncertaintyPair CalibratedUncertainty(const NigParams& p,
                                      const RecalibrationMap& r,
                                      const QuadratureConfig& q) {
  const CalibratedMomentsResult m = CalibratedMoments(Predictive(p), r, q);
  return {p.eta() * m.variance, m.variance};
}

UncertaintyMaps UncalibratedUncertaintyMaps(const NigParamMap& m) {
  return {AleatoricMap(m), EpistemicMap(m)};
}

UncertaintyMaps CalibratedUncertaintyMaps(const NigParamMap& m,
                                          const RecalibrationMap& r,
                                          const QuadratureConfig& q) {
  const PreparedRule rule = PrepareRule(r, q);
  UncertaintyMaps out{Tensor(m.shape()), Tensor(m.shape())};
  ParallelFor(m.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> std_q;
    for (std::size_t j = begin; j < end; ++j) {
      const NigParams p = m.at(j);
      const StudentTPredictive t = Predictive(p);
      const double eu = Scale(t, StandardizedRuleMoments(rule, t.dof(), q, std_q)).variance;
      out.epistemic[j] = eu;
      out.aleatoric[j] = p.eta() * eu;
    }
  });
  return out;
}

}  // namespace evfuse
