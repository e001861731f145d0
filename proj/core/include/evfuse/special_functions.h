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

// Scalar special functions used by the NIG / Student-t code paths.

#ifndef EVFUSE_SPECIAL_FUNCTIONS_H_
#define EVFUSE_SPECIAL_FUNCTIONS_H_

namespace evfuse {

// log Gamma(x) for x > 0. Recurrence up to x >= 10, then the Stirling series;
// absolute error below 1e-13 on [0.5, 50].
double LogGamma(double x);

// psi(x) = d/dx log Gamma(x) for x > 0.
double Digamma(double x);

// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
double RegularizedIncompleteBeta(double a, double b, double x);

// Standard (location 0, scale 1) Student-t with `dof` degrees of freedom.
double StandardStudentTCdf(double t, double dof);
double StandardStudentTLogPdf(double t, double dof);

// Inverse of StandardStudentTCdf. Bracketed Newton with bisection fallback;
// terminates when the bracket is narrower than 1e-10 (absolute, in t units).
double StandardStudentTQuantile(double prob, double dof);

}  // namespace evfuse

#endif  // EVFUSE_SPECIAL_FUNCTIONS_H_
