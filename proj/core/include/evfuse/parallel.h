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

#ifndef EVFUSE_PARALLEL_H_
#define EVFUSE_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace evfuse {

// Process-wide worker cap. Defaults to 1.
void SetThreadCount(std::size_t n);
std::size_t ThreadCount();

// Splits [0, n) into contiguous chunks, one per worker, and runs
// fn(begin, end) on each. Chunk boundaries depend only on n and the thread
// count, and callers only write disjoint outputs, so results never depend on
// scheduling.
void ParallelFor(std::size_t n,
                 const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace evfuse

#endif  // EVFUSE_PARALLEL_H_
