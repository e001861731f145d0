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

// Evidential losses and their analytic gradients.
//
// All scalar losses are sums over pixels. Batch averaging, when wanted, is the
// caller's job (see training.h).

#ifndef EVFUSE_LOSSES_H_
#define EVFUSE_LOSSES_H_

#include "evfuse/nig.h"
#include "evfuse/tensor.h"

namespace evfuse {

struct NllIntermediates {
  double omega = 0.0;  // 2 beta (1 + eta)
  double phi = 0.0;    // Gamma(alpha) / Gamma(alpha + 1/2)
};

NllIntermediates ComputeNllIntermediates(const NigParams& p);

// Negative log Student-t likelihood of y under the NIG marginal.
double PixelNll(const NigParams& p, double y);

struct NllResult {
  double total = 0.0;
  Tensor per_pixel;
};

NllResult NllLoss(const NigParamMap& pred, const Tensor& target);

// Sum_j |y_j - gamma_j| (2 eta_j + alpha_j).
double EvidenceRegularizer(const NigParamMap& pred, const Tensor& target);

struct LossBreakdown {
  double nll = 0.0;
  double regularizer = 0.0;
  double pixel_l1 = 0.0;
  double total = 0.0;
  Tensor per_pixel_nll;
};

// total = nll + lambda_r * regularizer. pixel_l1 is reported but not added.
LossBreakdown NigLoss(const NigParamMap& pred, const Tensor& target,
                      double lambda_r);

double PixelL1(const Tensor& gamma, const Tensor& target);

// Coefficients of  nll_weight * NLL + regularizer_weight * R + pixel_weight * L1.
struct LossWeights {
  double nll = 1.0;
  double regularizer = 0.0;
  double pixel = 0.0;
};

struct NigGradients {
  Tensor gamma;
  Tensor eta;
  Tensor alpha;
  Tensor beta;
};

// Weighted total loss and its per-pixel partials. The L1 subgradient at zero
// residual is 0.
struct LossAndGradients {
  double total = 0.0;
  LossBreakdown breakdown;
  NigGradients grads;
};

LossAndGradients ComputeLossAndGradients(const NigParamMap& pred,
                                         const Tensor& target,
                                         const LossWeights& weights);

// Partials of  NLL + lambda_r * R + lambda_pix * L1.
NigGradients LossGradients(const NigParamMap& pred, const Tensor& target,
                           double lambda_r, double lambda_pix);

}  // namespace evfuse

#endif  // EVFUSE_LOSSES_H_
