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

#ifndef EVFUSE_RNG_H_
#define EVFUSE_RNG_H_

#include <cstdint>

namespace evfuse {

// Counter-based 64-bit generator. Output i of stream s under key k is
// SplitMix64Mix(k ^ SplitMix64Mix(s) + i * golden). Streams are independent
// and any stream can be created directly, so per-subject generation is
// reproducible regardless of the order or thread it runs on.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t NextU64();
  // Uniform in [0, 1) with 53 random bits.
  double Uniform();
  // Uniform in (0, 1); never returns 0.
  double UniformOpen();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Standard normal via Box-Muller (one value per call, no cached state).
  double Normal();
  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }
  // Gamma(shape, 1) via Marsaglia-Tsang.
  double Gamma(double shape);
  // Uniform integer in [0, n).
  std::uint64_t Below(std::uint64_t n);

  // Derives an independent generator for a sub-stream.
  CounterRng Split(std::uint64_t sub_stream) const;

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

std::uint64_t SplitMix64Mix(std::uint64_t z);

}  // namespace evfuse

#endif  // EVFUSE_RNG_H_
