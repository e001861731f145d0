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

#include "evfuse/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "evfuse/errors.h"

namespace evfuse {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

// Height and width after dropping leading unit dims.
std::pair<std::size_t, std::size_t> ImageDims(const Tensor& t, const char* what) {
  const Shape& s = t.shape();
  if (s.size() < 2) {
    throw ShapeError(std::string(what) + ": need an image, got " +
                     ShapeToString(s));
  }
  for (std::size_t i = 0; i + 2 < s.size(); ++i) {
    if (s[i] != 1) {
      throw ShapeError(std::string(what) + ": expected a single image, got " +
                       ShapeToString(s));
    }
  }
  return {s[s.size() - 2], s[s.size() - 1]};
}

}  // namespace

double Psnr(const Tensor& pred, const Tensor& target, double data_range) {
  RequireSameShape(pred, target, "Psnr");
  if (!(data_range > 0.0)) throw DomainError("Psnr: data_range must be > 0");
  if (pred.empty()) throw ShapeError("Psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(pred.size());
  return 10.0 * std::log10(data_range * data_range / mse);
}

double Ssim(const Tensor& pred, const Tensor& target, double data_range) {
  RequireSameShape(pred, target, "Ssim");
  if (!(data_range > 0.0)) throw DomainError("Ssim: data_range must be > 0");
  const auto [h, w] = ImageDims(pred, "Ssim");
  if (h < kWindow || w < kWindow) {
    throw ShapeError("Ssim: images must be at least 11x11");
  }
  double kernel[kWindow * kWindow];
  double ksum = 0.0;
  const double half = (kWindow - 1) / 2.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    for (std::size_t j = 0; j < kWindow; ++j) {
      const double dy = static_cast<double>(i) - half;
      const double dx = static_cast<double>(j) - half;
      kernel[i * kWindow + j] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * kWindowSigma * kWindowSigma));
      ksum += kernel[i * kWindow + j];
    }
  }
  for (double& k : kernel) k /= ksum;

  const double c1 = (kK1 * data_range) * (kK1 * data_range);
  const double c2 = (kK2 * data_range) * (kK2 * data_range);
  const double* a = pred.data().data();
  const double* b = target.data().data();
  double total = 0.0;
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < kWindow; ++i) {
        for (std::size_t j = 0; j < kWindow; ++j) {
          const double k = kernel[i * kWindow + j];
          const double va = a[(y + i) * w + x + j];
          const double vb = b[(y + i) * w + x + j];
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  }
  return total / static_cast<double>(oh * ow);
}

UceResult Uce(const Tensor& uncertainty, const Tensor& squared_error,
              std::size_t n_bins) {
  RequireSameShape(uncertainty, squared_error, "Uce");
  if (n_bins < 1) throw DomainError("Uce: n_bins must be >= 1");
  const std::size_t n = uncertainty.size();
  if (n == 0) throw ShapeError("Uce: empty maps");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (uncertainty[i] != uncertainty[j]) return uncertainty[i] < uncertainty[j];
    return squared_error[i] < squared_error[j];
  });

  UceResult out;
  const std::size_t bins = std::min(n_bins, n);
  const std::size_t base = n / bins, extra = n % bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    UceBin bin;
    bin.count = base + (b < extra ? 1 : 0);
    for (std::size_t k = 0; k < bin.count; ++k, ++pos) {
      bin.mean_uncertainty += uncertainty[order[pos]];
      bin.mean_error += squared_error[order[pos]];
    }
    bin.mean_uncertainty /= static_cast<double>(bin.count);
    bin.mean_error /= static_cast<double>(bin.count);
    out.value += static_cast<double>(bin.count) / static_cast<double>(n) *
                 std::abs(bin.mean_error - bin.mean_uncertainty);
    out.bins.push_back(bin);
  }
  return out;
}

}  // namespace evfuse
