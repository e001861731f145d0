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

// Two-stage training.
//
// Stage I trains one EvidentialNet per source modality on
//   lambda_pix * L1(gamma, y) + lambda_nig * (NLL + lambda_r * R)
//     + lambda_pix * L1(recon, x).
// Stage II freezes every encoder, fuses the per-source encoder features with
// evidence weights and fine-tunes the decoders (the fusion net's and every
// local net's) on
//   L(combined) + L(global),
// each term shaped like the gamma part of the stage-I objective. Training the
// local decoders through the MoNIG combination is what makes their eta maps
// commensurate as fusion weights. The feature-fusion weights are recomputed
// from the current local eta maps at every step but treated as constants.
// lambda_r ramps linearly from 0 at the first iteration to lambda_r_max at
// the last.
//
// All losses are means over batch and pixels. Training is deterministic for a
// fixed config and seed, and throws NonFiniteError the moment a loss stops
// being finite.

#ifndef EVFUSE_TRAINING_H_
#define EVFUSE_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "evfuse/net.h"
#include "evfuse/nig.h"
#include "evfuse/synth.h"
#include "evfuse/tensor.h"

namespace evfuse {

struct TrainConfig {
  double lr_stage1 = 2e-3;
  double lr_stage2 = 2e-4;
  std::uint64_t iters_stage1 = 20000;
  std::uint64_t iters_stage2 = 5000;
  double lambda_pix = 100.0;
  double lambda_nig = 0.5;
  double lambda_r_max = 1.0;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  // Warm-restart schedule. restart_period == 0 picks ceil(iters / 7), which
  // with restart_mult == 2 ends the third period exactly at the last iteration.
  std::uint64_t restart_period = 0;
  double restart_mult = 2.0;

  void Validate() const;
};

// lambda_r_max * iter / total_iters; 0 when total_iters == 0.
double LambdaRamp(std::uint64_t iter, std::uint64_t total_iters,
                  double lambda_r_max);

struct LogRow {
  std::uint64_t iter = 0;
  double lr = 0.0;
  double lambda_r = 0.0;
  double loss_total = 0.0;
  double loss_nll = 0.0;
  double loss_reg = 0.0;
  double loss_pix = 0.0;
};

using TrainLog = std::vector<LogRow>;

void WriteLogCsv(const std::filesystem::path& path, const TrainLog& log);
TrainLog ReadLogCsv(const std::filesystem::path& path);

// Preprocessed images as [1, 1, H, W] tensors.
struct PreparedSample {
  std::vector<Tensor> sources;
  Tensor target;
  Tensor mask;
};

PreparedSample Prepare(const MultimodalSample& sample);
std::vector<PreparedSample> PrepareAll(const std::vector<MultimodalSample>& samples);

// Stacks [1, C, H, W] tensors along the batch axis.
Tensor StackBatch(const std::vector<const Tensor*>& items);

struct Stage1Result {
  EvidentialNet net;
  TrainLog log;
};

// Trains the net for source `modality`. The initial weights come from
// net_config with its seed offset by the modality index.
Stage1Result TrainStage1(const std::vector<PreparedSample>& train,
                         std::size_t modality, const NetConfig& net_config,
                         const TrainConfig& config);

enum class FusionMode { kLocalOnly, kGlobalOnly, kCombined };

std::string FusionModeName(FusionMode mode);
FusionMode ParseFusionMode(const std::string& name);

struct Stage2Result {
  std::vector<EvidentialNet> local_nets;
  EvidentialNet fusion_net;
  TrainLog log;
};

// The fusion net starts as a copy of the first local net.
// kLocalOnly trains the local decoders on L(fold of locals); the fusion net
// is returned untouched. kGlobalOnly trains the fusion decoder on L(global)
// with the locals frozen. kCombined trains all decoders on
// L(locals (+) global) + L(global).
Stage2Result TrainStage2(const std::vector<EvidentialNet>& local_nets,
                         const std::vector<PreparedSample>& train,
                         FusionMode mode, const TrainConfig& config);

// Prediction of a trained pipeline for one sample, by mode:
// kLocalOnly = fold of locals, kGlobalOnly = global, kCombined = locals (+)
// global.
struct PipelinePrediction {
  NigParamMap fused;
  std::vector<NigParamMap> locals;
};

PipelinePrediction PredictPipeline(const std::vector<EvidentialNet>& local_nets,
                                   const EvidentialNet& fusion_net,
                                   FusionMode mode, const PreparedSample& sample);

// 1-D cubic toy problem: y = x^3 + eps, eps ~ N(0, 3^2).
struct CubicConfig {
  std::size_t n_train = 1000;
  std::size_t n_val = 200;
  double x_lo = -4.0;
  double x_hi = 4.0;
  double noise_sd = 3.0;
  std::uint64_t iters = 2000;
  std::size_t batch = 128;
  double lr = 5e-3;
  double lambda_r = 0.01;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;
};

struct CubicData {
  Tensor x;  // [n, 1]
  Tensor y;  // [n, 1]
};

CubicData MakeCubicData(std::size_t n, double x_lo, double x_hi, double noise_sd,
                        std::uint64_t seed, std::uint64_t stream);

struct CubicResult {
  EvidentialMlp model;
  double y_scale = 1.0;  // the model predicts y / y_scale
  double initial_val_nll = 0.0;
  double final_val_nll = 0.0;
  TrainLog log;
};

// Mean validation NLL is reported in the original units of y.
CubicResult TrainCubic(const CubicConfig& config);

// Prediction in the original units of y.
NigParamMap PredictCubic(const CubicResult& result, const Tensor& x);

}  // namespace evfuse

#endif  // EVFUSE_TRAINING_H_
