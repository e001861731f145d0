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

#ifndef EVFUSE_OPTIM_H_
#define EVFUSE_OPTIM_H_

#include <cstdint>
#include <span>
#include <vector>

#include "evfuse/tensor.h"

namespace evfuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update. The state is lazily sized on first use;
// afterwards the parameter list must keep the same shapes.
void AdamStep(std::span<Tensor* const> params, std::span<const Tensor> grads,
              AdamState& state, double lr, const AdamConfig& config = {});

// SGDR schedule: within a period of length T_i the rate follows
// base_lr * (1 + cos(pi * t_cur / T_i)) / 2; periods start at t0 and grow by
// t_mult after every restart.
double CosineWarmRestartLr(std::uint64_t iter, double base_lr,
                           std::uint64_t t0, double t_mult);

}  // namespace evfuse

#endif  // EVFUSE_OPTIM_H_
