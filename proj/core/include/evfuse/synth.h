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

// Synthetic multimodal image-translation benchmark.
//
// Each subject has a latent "tissue" image: a head-shaped ellipse filled with
// a band-limited smooth field and a few elliptical structures. Every source
// modality views the latent through its own monotone sigmoid contrast (each
// one resolves a different intensity range) plus Gaussian noise. The target
// is the latent itself plus noise. Lesion-bearing subjects get a peritumoral
// region that all modalities see, and inside it an enhancing core that is
// added to the target only; the core is recorded in `enhancing_mask`.

#ifndef EVFUSE_SYNTH_H_
#define EVFUSE_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evfuse/tensor.h"

namespace evfuse {

struct SynthConfig {
  std::size_t n_subjects = 40;
  std::size_t image_size = 64;
  std::size_t n_modalities = 3;
  double lesion_rate = 0.5;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct MultimodalSample {
  std::uint64_t subject_id = 0;
  bool has_lesion = false;
  std::vector<Tensor> sources;  // each [H, W]
  Tensor target;                // [H, W]
  Tensor enhancing_mask;        // [H, W], 0/1
};

struct DatasetSplits {
  std::vector<MultimodalSample> train;
  std::vector<MultimodalSample> val;
  std::vector<MultimodalSample> test;
};

// Subjects are generated independently from (seed, subject id), then assigned
// to train/val/test (80/10/10, at least one each) by a seeded shuffle.
DatasetSplits GenerateDataset(const SynthConfig& config);
MultimodalSample GenerateSubject(const SynthConfig& config,
                                 std::uint64_t subject_id);

// Clips at the nearest-rank 99th percentile (sorted index ceil(0.99 n) - 1),
// then z-scores with the clipped mean and population standard deviation.
// Constant images map to all zeros.
Tensor Preprocess(const Tensor& image);
double NearestRankPercentile(const Tensor& image, double q);

// <dir>/<split>/subject_NNNN/{source_<m>,target,mask}.tnsr + meta.json
void WriteDataset(const std::filesystem::path& dir, const DatasetSplits& data,
                  const SynthConfig& config);
std::vector<MultimodalSample> ReadSplit(const std::filesystem::path& dir,
                                        const std::string& split);

std::string SubjectDirName(std::uint64_t subject_id);

}  // namespace evfuse

#endif  // EVFUSE_SYNTH_H_
