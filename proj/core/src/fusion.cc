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

#include "evfuse/fusion.h"

#include "evfuse/errors.h"

namespace evfuse {

namespace {

struct Fused {
  double gamma, eta, alpha, beta;
};

inline Fused PairRaw(double ga, double ea, double aa, double ba, double gb,
                     double eb, double ab, double bb) {
  const double eta = ea + eb;
  const double gamma = (ea * ga + eb * gb) / eta;
  const double da = ga - gamma;
  const double db = gb - gamma;
  // Every sum pairs an a-term with its b-term, so swapping a and b gives the
  // same bits.
  return {gamma, eta, (aa + ab) + 0.5,
          (ba + bb) + (0.5 * ea * da * da + 0.5 * eb * db * db)};
}

}  // namespace

NigParams MonigPair(const NigParams& a, const NigParams& b) {
  const Fused f = PairRaw(a.gamma(), a.eta(), a.alpha(), a.beta(), b.gamma(),
                          b.eta(), b.alpha(), b.beta());
  return NigParams(f.gamma, f.eta, f.alpha, f.beta);
}

NigParamMap MonigPair(const NigParamMap& a, const NigParamMap& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("MonigPair: shape mismatch " + ShapeToString(a.shape()) +
                     " vs " + ShapeToString(b.shape()));
  }
  const Shape& shape = a.shape();
  Tensor gamma(shape), eta(shape), alpha(shape), beta(shape);
  for (std::size_t j = 0; j < a.size(); ++j) {
    const Fused f =
        PairRaw(a.gamma()[j], a.eta()[j], a.alpha()[j], a.beta()[j],
                b.gamma()[j], b.eta()[j], b.alpha()[j], b.beta()[j]);
    gamma[j] = f.gamma;
    eta[j] = f.eta;
    alpha[j] = f.alpha;
    beta[j] = f.beta;
  }
  return NigParamMap(std::move(gamma), std::move(eta), std::move(alpha),
                     std::move(beta));
}

NigParamMap MonigFold(std::span<const NigParamMap> maps) {
  if (maps.empty()) throw DomainError("MonigFold: need at least one map");
  NigParamMap acc = maps[0];
  for (std::size_t m = 1; m < maps.size(); ++m) acc = MonigPair(acc, maps[m]);
  return acc;
}

NigParamMap CombineLocalGlobal(std::span<const NigParamMap> locals,
                               const NigParamMap& global_pred) {
  std::vector<NigParamMap> all(locals.begin(), locals.end());
  all.push_back(global_pred);
  return MonigFold(all);
}

PairGradients MonigPairBackward(const NigParamMap& a, const NigParamMap& b,
                                const NigGradients& g) {
  RequireSameShape(a.gamma(), b.gamma(), "MonigPairBackward");
  RequireSameShape(a.gamma(), g.gamma, "MonigPairBackward");
  const Shape& shape = a.shape();
  PairGradients out{{Tensor(shape), Tensor(shape), Tensor(shape), Tensor(shape)},
                    {Tensor(shape), Tensor(shape), Tensor(shape), Tensor(shape)}};
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double ea = a.eta()[j];
    const double eb = b.eta()[j];
    const double total = ea + eb;
    const double gamma = (ea * a.gamma()[j] + eb * b.gamma()[j]) / total;
    const double da = a.gamma()[j] - gamma;
    const double db = b.gamma()[j] - gamma;
    // The beta penalty is stationary in the fused mean, so its partials only
    // see the explicit dependence on each source.
    out.a.gamma[j] = g.gamma[j] * ea / total + g.beta[j] * ea * da;
    out.b.gamma[j] = g.gamma[j] * eb / total + g.beta[j] * eb * db;
    out.a.eta[j] = g.gamma[j] * da / total + g.eta[j] + 0.5 * g.beta[j] * da * da;
    out.b.eta[j] = g.gamma[j] * db / total + g.eta[j] + 0.5 * g.beta[j] * db * db;
    out.a.alpha[j] = g.alpha[j];
    out.b.alpha[j] = g.alpha[j];
    out.a.beta[j] = g.beta[j];
    out.b.beta[j] = g.beta[j];
  }
  return out;
}

FusionWeights EvidenceWeights(std::span<const NigParamMap> locals) {
  if (locals.empty()) throw DomainError("EvidenceWeights: need >= 1 source");
  const Shape& shape = locals[0].shape();
  for (const NigParamMap& m : locals) {
    if (m.shape() != shape) throw ShapeError("EvidenceWeights: shape mismatch");
  }
  FusionWeights out;
  out.weights.assign(locals.size(), Tensor(shape));
  for (std::size_t j = 0; j < locals[0].size(); ++j) {
    double total = 0.0;
    for (const NigParamMap& m : locals) total += m.eta()[j];
    for (std::size_t m = 0; m < locals.size(); ++m) {
      out.weights[m][j] = locals[m].eta()[j] / total;
    }
  }
  return out;
}

FusionWeights PoolWeights(const FusionWeights& w, std::size_t factor) {
  if (w.weights.empty()) throw DomainError("PoolWeights: no weights");
  if (factor == 1) return w;
  const Shape& shape = w.weights[0].shape();
  if (shape.size() < 2) throw ShapeError("PoolWeights: need spatial dims");
  const std::size_t h = shape[shape.size() - 2];
  const std::size_t wd = shape[shape.size() - 1];
  if (factor == 0 || h % factor != 0 || wd % factor != 0) {
    throw ShapeError("PoolWeights: spatial dims " + ShapeToString(shape) +
                     " not divisible by " + std::to_string(factor));
  }
  const std::size_t planes = NumElements(shape) / (h * wd);
  const std::size_t oh = h / factor;
  const std::size_t ow = wd / factor;
  Shape out_shape = shape;
  out_shape[shape.size() - 2] = oh;
  out_shape[shape.size() - 1] = ow;

  FusionWeights out;
  const double inv_area = 1.0 / static_cast<double>(factor * factor);
  for (const Tensor& src : w.weights) {
    Tensor dst(out_shape);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < wd; ++x) {
          dst[(p * oh + y / factor) * ow + x / factor] +=
              src[(p * h + y) * wd + x] * inv_area;
        }
      }
    }
    out.weights.push_back(std::move(dst));
  }
  for (std::size_t j = 0; j < out.weights[0].size(); ++j) {
    double total = 0.0;
    for (const Tensor& t : out.weights) total += t[j];
    for (Tensor& t : out.weights) t[j] /= total;
  }
  return out;
}

}  // namespace evfuse
