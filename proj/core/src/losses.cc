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

#include "evfuse/losses.h"

#include <cmath>
#include <numbers>

#include "evfuse/errors.h"
#include "evfuse/special_functions.h"

namespace evfuse {

namespace {

double Sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double LogPhi(double alpha) { return LogGamma(alpha) - LogGamma(alpha + 0.5); }

double PixelNllRaw(double gamma, double eta, double alpha, double beta,
                   double y) {
  const double omega = 2.0 * beta * (1.0 + eta);
  const double r = y - gamma;
  return 0.5 * std::log(std::numbers::pi / eta) - alpha * std::log(omega) +
         (alpha + 0.5) * std::log(r * r * eta + omega) + LogPhi(alpha);
}

}  // namespace

NllIntermediates ComputeNllIntermediates(const NigParams& p) {
  return {2.0 * p.beta() * (1.0 + p.eta()), std::exp(LogPhi(p.alpha()))};
}

double PixelNll(const NigParams& p, double y) {
  return PixelNllRaw(p.gamma(), p.eta(), p.alpha(), p.beta(), y);
}

NllResult NllLoss(const NigParamMap& pred, const Tensor& target) {
  RequireSameShape(pred.gamma(), target, "NllLoss");
  NllResult out{0.0, Tensor(target.shape())};
  for (std::size_t j = 0; j < target.size(); ++j) {
    const double v = PixelNllRaw(pred.gamma()[j], pred.eta()[j],
                                 pred.alpha()[j], pred.beta()[j], target[j]);
    out.per_pixel[j] = v;
    out.total += v;
  }
  return out;
}

double EvidenceRegularizer(const NigParamMap& pred, const Tensor& target) {
  RequireSameShape(pred.gamma(), target, "EvidenceRegularizer");
  double sum = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    sum += std::fabs(target[j] - pred.gamma()[j]) *
           (2.0 * pred.eta()[j] + pred.alpha()[j]);
  }
  return sum;
}

double PixelL1(const Tensor& gamma, const Tensor& target) {
  RequireSameShape(gamma, target, "PixelL1");
  double sum = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    sum += std::fabs(gamma[j] - target[j]);
  }
  return sum;
}

LossBreakdown NigLoss(const NigParamMap& pred, const Tensor& target,
                      double lambda_r) {
  if (!(lambda_r >= 0.0)) throw DomainError("NigLoss: lambda_r must be >= 0");
  NllResult nll = NllLoss(pred, target);
  LossBreakdown out;
  out.nll = nll.total;
  out.regularizer = EvidenceRegularizer(pred, target);
  out.pixel_l1 = PixelL1(pred.gamma(), target);
  out.total = out.nll + lambda_r * out.regularizer;
  out.per_pixel_nll = std::move(nll.per_pixel);
  return out;
}

LossAndGradients ComputeLossAndGradients(const NigParamMap& pred,
                                         const Tensor& target,
                                         const LossWeights& weights) {
  RequireSameShape(pred.gamma(), target, "ComputeLossAndGradients");
  const Shape& shape = target.shape();
  LossAndGradients out;
  out.breakdown.per_pixel_nll = Tensor(shape);
  out.grads = {Tensor(shape), Tensor(shape), Tensor(shape), Tensor(shape)};
  for (std::size_t j = 0; j < target.size(); ++j) {
    const double gamma = pred.gamma()[j];
    const double eta = pred.eta()[j];
    const double alpha = pred.alpha()[j];
    const double beta = pred.beta()[j];
    const double r = target[j] - gamma;
    const double omega = 2.0 * beta * (1.0 + eta);
    const double s = r * r * eta + omega;
    const double abs_r = std::fabs(r);

    const double nll = 0.5 * std::log(std::numbers::pi / eta) -
                       alpha * std::log(omega) +
                       (alpha + 0.5) * std::log(s) + LogPhi(alpha);
    const double reg = abs_r * (2.0 * eta + alpha);
    out.breakdown.per_pixel_nll[j] = nll;
    out.breakdown.nll += nll;
    out.breakdown.regularizer += reg;
    out.breakdown.pixel_l1 += abs_r;

    const double a_half = alpha + 0.5;
    const double d_nll_gamma = -2.0 * a_half * eta * r / s;
    const double d_nll_eta =
        -0.5 / eta - alpha / (1.0 + eta) + a_half * (r * r + 2.0 * beta) / s;
    const double d_nll_alpha = std::log(s) - std::log(omega) + Digamma(alpha) -
                               Digamma(alpha + 0.5);
    const double d_nll_beta =
        -alpha / beta + 2.0 * a_half * (1.0 + eta) / s;

    const double sign_r = Sign(r);
    out.grads.gamma[j] = weights.nll * d_nll_gamma -
                         weights.regularizer * sign_r * (2.0 * eta + alpha) -
                         weights.pixel * sign_r;
    out.grads.eta[j] = weights.nll * d_nll_eta + weights.regularizer * 2.0 * abs_r;
    out.grads.alpha[j] = weights.nll * d_nll_alpha + weights.regularizer * abs_r;
    out.grads.beta[j] = weights.nll * d_nll_beta;
  }
  out.breakdown.total = weights.nll * out.breakdown.nll +
                        weights.regularizer * out.breakdown.regularizer;
  out.total = out.breakdown.total + weights.pixel * out.breakdown.pixel_l1;
  return out;
}

NigGradients LossGradients(const NigParamMap& pred, const Tensor& target,
                           double lambda_r, double lambda_pix) {
  return ComputeLossAndGradients(pred, target, {1.0, lambda_r, lambda_pix})
      .grads;
}

}  // namespace evfuse
