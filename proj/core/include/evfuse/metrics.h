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

// Image-quality and uncertainty-calibration metrics.
//
// Images may be [H, W] or carry any number of leading unit dims
// (e.g. [1, 1, H, W]).

#ifndef EVFUSE_METRICS_H_
#define EVFUSE_METRICS_H_

#include <cstddef>
#include <vector>

#include "evfuse/tensor.h"

namespace evfuse {

// 10 log10(range^2 / MSE). Identical inputs give +infinity.
double Psnr(const Tensor& pred, const Tensor& target, double data_range);

// Mean local SSIM over the valid region of an 11x11 Gaussian window
// (sigma 1.5), K1 = 0.01, K2 = 0.03.
double Ssim(const Tensor& pred, const Tensor& target, double data_range);

struct UceBin {
  std::size_t count = 0;
  double mean_uncertainty = 0.0;
  double mean_error = 0.0;
};

struct UceResult {
  double value = 0.0;
  std::vector<UceBin> bins;
};

// Pixels sorted by (uncertainty, error) and split into n_bins equal-count
// bins (the first N mod n_bins bins take one extra pixel);
// UCE = sum_b (n_b / N) |mean_error_b - mean_uncertainty_b|.
UceResult Uce(const Tensor& uncertainty, const Tensor& squared_error,
              std::size_t n_bins = 10);

}  // namespace evfuse

#endif  // EVFUSE_METRICS_H_
