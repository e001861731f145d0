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

#include "evfuse/optim.h"

#include <cmath>
#include <numbers>

#include "evfuse/errors.h"

namespace evfuse {

void AdamStep(std::span<Tensor* const> params, std::span<const Tensor> grads,
              AdamState& state, double lr, const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw ShapeError("AdamStep: " + std::to_string(params.size()) +
                     " parameters vs " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("AdamStep: optimizer state has a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    RequireSameShape(*params[i], grads[i], "AdamStep");
    RequireSameShape(*params[i], state.first_moment[i], "AdamStep state");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double CosineWarmRestartLr(std::uint64_t iter, double base_lr,
                           std::uint64_t t0, double t_mult) {
  if (t0 < 1 || !(t_mult >= 1.0)) {
    throw DomainError("CosineWarmRestartLr: need t0 >= 1 and t_mult >= 1");
  }
  double t_cur = static_cast<double>(iter);
  double period = static_cast<double>(t0);
  if (t_mult == 1.0) {
    t_cur = static_cast<double>(iter % t0);
  } else {
    while (t_cur >= period) {
      t_cur -= period;
      period = std::floor(period * t_mult);
    }
  }
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t_cur / period));
}

}  // namespace evfuse
