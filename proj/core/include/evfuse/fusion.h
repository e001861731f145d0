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

// Mixture-of-NIG (MoNIG) fusion.
//
// The pairwise summation a (+) b, per pixel:
//   gamma = (eta_a gamma_a + eta_b gamma_b) / (eta_a + eta_b)
//   eta   = eta_a + eta_b
//   alpha = alpha_a + alpha_b + 1/2
//   beta  = beta_a + beta_b + eta_a (gamma_a - gamma)^2 / 2
//                           + eta_b (gamma_b - gamma)^2 / 2
// Evidence accumulates and disagreement between the sources inflates beta.

#ifndef EVFUSE_FUSION_H_
#define EVFUSE_FUSION_H_

#include <span>
#include <vector>

#include "evfuse/losses.h"
#include "evfuse/nig.h"
#include "evfuse/tensor.h"

namespace evfuse {

NigParamMap MonigPair(const NigParamMap& a, const NigParamMap& b);
NigParams MonigPair(const NigParams& a, const NigParams& b);

// Left fold of MonigPair. A single map is returned unchanged.
NigParamMap MonigFold(std::span<const NigParamMap> maps);

// locals (+) ... (+) global.
NigParamMap CombineLocalGlobal(std::span<const NigParamMap> locals,
                               const NigParamMap& global_pred);

// Given dL/d(a (+) b), returns dL/da and dL/db.
struct PairGradients {
  NigGradients a;
  NigGradients b;
};
PairGradients MonigPairBackward(const NigParamMap& a, const NigParamMap& b,
                                const NigGradients& grad_out);

// Per-pixel normalized weights w_m = eta_m / sum_k eta_k, one tensor per
// source, each shaped like the input maps.
struct FusionWeights {
  std::vector<Tensor> weights;
};

FusionWeights EvidenceWeights(std::span<const NigParamMap> locals);

// Average-pools [N, 1, H, W] weights by `factor` (a power of two) and
// renormalizes so the sources sum to 1 again at every coarse location.
FusionWeights PoolWeights(const FusionWeights& w, std::size_t factor);

}  // namespace evfuse

#endif  // EVFUSE_FUSION_H_
