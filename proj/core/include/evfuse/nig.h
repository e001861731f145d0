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

// Normal-Inverse-Gamma distribution math.
//
// A NIG(gamma, eta, alpha, beta) places a prior on the mean and variance of
// a Gaussian likelihood:
//   sigma^2 ~ InvGamma(alpha, beta),  mu | sigma^2 ~ N(gamma, sigma^2 / eta).
// Marginalizing (mu, sigma^2) gives a Student-t predictive for the target.

#ifndef EVFUSE_NIG_H_
#define EVFUSE_NIG_H_

#include <cstdint>
#include <utility>
#include <vector>

#include "evfuse/tensor.h"

namespace evfuse {

// Evidential parameters of one pixel. Validated on construction.
class NigParams {
 public:
  NigParams(double gamma, double eta, double alpha, double beta);

  double gamma() const { return gamma_; }
  double eta() const { return eta_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  friend bool operator==(const NigParams&, const NigParams&) = default;

 private:
  double gamma_;
  double eta_;
  double alpha_;
  double beta_;
};

// Location-scale Student-t. `scale` is the standard-deviation-like parameter.
class StudentTPredictive {
 public:
  StudentTPredictive(double location, double scale, double dof);

  double location() const { return location_; }
  double scale() const { return scale_; }
  double dof() const { return dof_; }

  double LogPdf(double y) const;
  double Cdf(double y) const;
  double Variance() const;
  StudentTPredictive WithScale(double scale) const {
    return StudentTPredictive(location_, scale, dof_);
  }

 private:
  double location_;
  double scale_;
  double dof_;
};

struct UncertaintyPair {
  double aleatoric = 0.0;
  double epistemic = 0.0;
};

// Per-pixel parameter maps; all four tensors share one shape.
class NigParamMap {
 public:
  NigParamMap(Tensor gamma, Tensor eta, Tensor alpha, Tensor beta);
  static NigParamMap Uniform(const Shape& shape, const NigParams& p);

  const Tensor& gamma() const { return gamma_; }
  const Tensor& eta() const { return eta_; }
  const Tensor& alpha() const { return alpha_; }
  const Tensor& beta() const { return beta_; }
  const Shape& shape() const { return gamma_.shape(); }
  std::size_t size() const { return gamma_.size(); }

  NigParams at(std::size_t j) const {
    return NigParams(gamma_[j], eta_[j], alpha_[j], beta_[j]);
  }

 private:
  Tensor gamma_;
  Tensor eta_;
  Tensor alpha_;
  Tensor beta_;
};

// Natural log of the joint NIG density at (mu, sigma2).
double NigLogPdf(const NigParams& p, double mu, double sigma2);

// Student-t marginal: location gamma, dof 2 alpha,
// scale sqrt(beta (1 + eta) / (eta alpha)).
StudentTPredictive Predictive(const NigParams& p);

// AU = beta / (alpha - 1), EU = beta / (eta (alpha - 1)).
UncertaintyPair Uncertainty(const NigParams& p);

double PredictiveQuantile(const StudentTPredictive& t, double prob);

// Draws sigma^2 ~ InvGamma(alpha, beta), then mu ~ N(gamma, sigma^2 / eta).
// Returns (mu, sigma2) pairs; deterministic given the seed.
std::vector<std::pair<double, double>> SamplePosterior(const NigParams& p,
                                                       std::size_t n,
                                                       std::uint64_t seed);

// Elementwise helpers over a map.
Tensor AleatoricMap(const NigParamMap& m);
Tensor EpistemicMap(const NigParamMap& m);

}  // namespace evfuse

#endif  // EVFUSE_NIG_H_
