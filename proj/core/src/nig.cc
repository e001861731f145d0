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

#include "evfuse/nig.h"

#include <cmath>
#include <numbers>
#include <string>

#include "evfuse/errors.h"
#include "evfuse/rng.h"
#include "evfuse/special_functions.h"

namespace evfuse {

namespace {

std::string Describe(double gamma, double eta, double alpha, double beta) {
  return "(gamma=" + std::to_string(gamma) + ", eta=" + std::to_string(eta) +
         ", alpha=" + std::to_string(alpha) + ", beta=" + std::to_string(beta) +
         ")";
}

bool ValidNig(double gamma, double eta, double alpha, double beta) {
  return std::isfinite(gamma) && eta > 0.0 && std::isfinite(eta) &&
         alpha > 1.0 && std::isfinite(alpha) && beta > 0.0 &&
         std::isfinite(beta);
}

}  // namespace

NigParams::NigParams(double gamma, double eta, double alpha, double beta)
    : gamma_(gamma), eta_(eta), alpha_(alpha), beta_(beta) {
  if (!ValidNig(gamma, eta, alpha, beta)) {
    throw ConstraintError("invalid NIG parameters " +
                          Describe(gamma, eta, alpha, beta) +
                          ": need eta > 0, alpha > 1, beta > 0, finite gamma");
  }
}

StudentTPredictive::StudentTPredictive(double location, double scale,
                                       double dof)
    : location_(location), scale_(scale), dof_(dof) {
  if (!std::isfinite(location) || !(scale > 0.0) || !std::isfinite(scale) ||
      !(dof > 2.0) || !std::isfinite(dof)) {
    throw ConstraintError("invalid Student-t: need finite location, scale > 0, "
                          "dof > 2");
  }
}

double StudentTPredictive::LogPdf(double y) const {
  return StandardStudentTLogPdf((y - location_) / scale_, dof_) -
         std::log(scale_);
}

double StudentTPredictive::Cdf(double y) const {
  return StandardStudentTCdf((y - location_) / scale_, dof_);
}

double StudentTPredictive::Variance() const {
  return scale_ * scale_ * dof_ / (dof_ - 2.0);
}

NigParamMap::NigParamMap(Tensor gamma, Tensor eta, Tensor alpha, Tensor beta)
    : gamma_(std::move(gamma)),
      eta_(std::move(eta)),
      alpha_(std::move(alpha)),
      beta_(std::move(beta)) {
  RequireSameShape(gamma_, eta_, "NigParamMap");
  RequireSameShape(gamma_, alpha_, "NigParamMap");
  RequireSameShape(gamma_, beta_, "NigParamMap");
  for (std::size_t j = 0; j < gamma_.size(); ++j) {
    if (!ValidNig(gamma_[j], eta_[j], alpha_[j], beta_[j])) {
      throw ConstraintError("invalid NIG parameters at pixel " +
                            std::to_string(j) + " " +
                            Describe(gamma_[j], eta_[j], alpha_[j], beta_[j]));
    }
  }
}

NigParamMap NigParamMap::Uniform(const Shape& shape, const NigParams& p) {
  return NigParamMap(Tensor(shape, p.gamma()), Tensor(shape, p.eta()),
                     Tensor(shape, p.alpha()), Tensor(shape, p.beta()));
}

double NigLogPdf(const NigParams& p, double mu, double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw ConstraintError("NigLogPdf: sigma2 must be positive and finite");
  }
  const double diff = mu - p.gamma();
  return p.alpha() * std::log(p.beta()) - LogGamma(p.alpha()) +
         0.5 * std::log(p.eta()) -
         0.5 * std::log(2.0 * std::numbers::pi * sigma2) -
         (p.alpha() + 1.0) * std::log(sigma2) -
         (2.0 * p.beta() + p.eta() * diff * diff) / (2.0 * sigma2);
}

StudentTPredictive Predictive(const NigParams& p) {
  const double scale2 =
      p.beta() * (1.0 + p.eta()) / (p.eta() * p.alpha());
  return StudentTPredictive(p.gamma(), std::sqrt(scale2), 2.0 * p.alpha());
}

UncertaintyPair Uncertainty(const NigParams& p) {
  // AU is derived from EU so that AU == eta * EU holds bit-exactly.
  const double epistemic = p.beta() / (p.eta() * (p.alpha() - 1.0));
  return {p.eta() * epistemic, epistemic};
}

double PredictiveQuantile(const StudentTPredictive& t, double prob) {
  return t.location() + t.scale() * StandardStudentTQuantile(prob, t.dof());
}

std::vector<std::pair<double, double>> SamplePosterior(const NigParams& p,
                                                       std::size_t n,
                                                       std::uint64_t seed) {
  if (n == 0) throw DomainError("SamplePosterior: n must be >= 1");
  CounterRng rng(seed);
  std::vector<std::pair<double, double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma2 = p.beta() / rng.Gamma(p.alpha());
    const double mu = rng.Normal(p.gamma(), std::sqrt(sigma2 / p.eta()));
    out.emplace_back(mu, sigma2);
  }
  return out;
}

Tensor AleatoricMap(const NigParamMap& m) {
  Tensor out(m.shape());
  for (std::size_t j = 0; j < m.size(); ++j) {
    out[j] = m.eta()[j] *
             (m.beta()[j] / (m.eta()[j] * (m.alpha()[j] - 1.0)));
  }
  return out;
}

Tensor EpistemicMap(const NigParamMap& m) {
  Tensor out(m.shape());
  for (std::size_t j = 0; j < m.size(); ++j) {
    out[j] = m.beta()[j] / (m.eta()[j] * (m.alpha()[j] - 1.0));
  }
  return out;
}

}  // namespace evfuse
