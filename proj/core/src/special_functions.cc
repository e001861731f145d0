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

#include "evfuse/special_functions.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "evfuse/errors.h"

namespace evfuse {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;

// Bernoulli-number coefficients B_2k / (2k (2k-1)) of the Stirling series.
constexpr double kStirling[] = {
    1.0 / 12.0,          -1.0 / 360.0,    1.0 / 1260.0,  -1.0 / 1680.0,
    1.0 / 1188.0,        -691.0 / 360360.0, 1.0 / 156.0, -3617.0 / 122400.0,
};

// Continued fraction for the incomplete beta function (modified Lentz).
double BetaContinuedFraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

// Quantile for prob in (0, 0.5]; the answer is <= 0.
double LowerQuantile(double prob, double dof) {
  if (prob == 0.5) return 0.0;
  double lo = -1.0;
  while (StandardStudentTCdf(lo, dof) >= prob) lo *= 2.0;
  double hi = 0.0;
  double t = 0.5 * (lo + hi);
  for (int iter = 0; iter < 400; ++iter) {
    const double f = StandardStudentTCdf(t, dof) - prob;
    if (f == 0.0) return t;
    if (f < 0.0) {
      lo = t;
    } else {
      hi = t;
    }
    if (hi - lo < 1e-10) return 0.5 * (lo + hi);
    const double density = std::exp(StandardStudentTLogPdf(t, dof));
    double next = t - f / density;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::fabs(next - t) < 1e-13 * (1.0 + std::fabs(t))) return next;
    t = next;
  }
  return t;
}

}  // namespace

double LogGamma(double x) {
  if (!(x > 0.0)) throw DomainError("LogGamma: argument must be positive");
  double shift = 0.0;
  double prod = 1.0;
  while (x < 10.0) {
    prod *= x;
    x += 1.0;
    // Keep the running product in range for very small arguments.
    if (prod < 1e-200) {
      shift += std::log(prod);
      prod = 1.0;
    }
  }
  shift += std::log(prod);
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = 0.0;
  double power = inv;
  for (double coef : kStirling) {
    series += coef * power;
    power *= inv2;
  }
  return (x - 0.5) * std::log(x) - x + kHalfLogTwoPi + series - shift;
}

double Digamma(double x) {
  if (!(x > 0.0)) throw DomainError("Digamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv2 = 1.0 / (x * x);
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result + std::log(x) - 0.5 / x - tail;
}

double RegularizedIncompleteBeta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw DomainError("RegularizedIncompleteBeta: a and b must be positive");
  }
  if (!(x >= 0.0 && x <= 1.0)) {
    throw DomainError("RegularizedIncompleteBeta: x must lie in [0, 1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = LogGamma(a + b) - LogGamma(a) - LogGamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * BetaContinuedFraction(a, b, x) / a;
  }
  return 1.0 - front * BetaContinuedFraction(b, a, 1.0 - x) / b;
}

double StandardStudentTCdf(double t, double dof) {
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * RegularizedIncompleteBeta(0.5 * dof, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

double StandardStudentTLogPdf(double t, double dof) {
  return LogGamma(0.5 * (dof + 1.0)) - LogGamma(0.5 * dof) -
         0.5 * std::log(dof * std::numbers::pi) -
         0.5 * (dof + 1.0) * std::log1p(t * t / dof);
}

double StandardStudentTQuantile(double prob, double dof) {
  if (!(prob > 0.0 && prob < 1.0)) {
    throw DomainError("Student-t quantile: probability must lie in (0, 1)");
  }
  // 1 - prob is exact for prob in [0.5, 1), so the two halves mirror exactly.
  if (prob > 0.5) return -LowerQuantile(1.0 - prob, dof);
  return LowerQuantile(prob, dof);
}

}  // namespace evfuse
