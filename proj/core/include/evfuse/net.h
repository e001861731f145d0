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

// Evidential estimators.
//
// EvidentialNet is a small U-shaped encoder/decoder. The encoder yields one
// feature map per level (full resolution first, bottleneck last); the decoder
// upsamples the bottleneck and merges the skip features level by level. Five
// 1-channel heads sit on the last decoder map:
//
//   gamma  linear
//   eta    softplus + 1e-9
//   alpha  softplus + 1 + 1e-9
//   beta   softplus + 1e-9
//   recon  linear (self-reconstruction of the input)
//
// so eta > 0, alpha > 1 and beta > 0 hold for any weights and input.

#ifndef EVFUSE_NET_H_
#define EVFUSE_NET_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evfuse/autodiff.h"
#include "evfuse/fusion.h"
#include "evfuse/nig.h"
#include "evfuse/tensor.h"

namespace evfuse {

struct NetConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 16;
  std::size_t input_channels = 1;
  std::uint64_t seed = 0;

  void Validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Parameters bound to a tape, index-aligned with the owning model's
// parameters().
struct BoundParams {
  std::vector<Var> vars;
};

// Head outputs, each [N, 1, H, W].
struct HeadVars {
  Var gamma, eta, alpha, beta, recon;
};

class EvidentialNet {
 public:
  // Fan-in scaled Gaussian weights drawn from config.seed, zero biases.
  explicit EvidentialNet(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t ParameterCount() const;

  bool IsEncoderParameter(std::size_t index) const;

  // Spatial dims must be divisible by 2^(levels - 1).
  void CheckInputShape(const Shape& shape) const;

  BoundParams Bind(Tape& tape, bool train_encoder, bool train_decoder) const;
  std::vector<Var> Encode(Tape& tape, const BoundParams& p, Var image) const;
  HeadVars Decode(Tape& tape, const BoundParams& p,
                  std::span<const Var> features) const;

  friend bool operator==(const EvidentialNet& a, const EvidentialNet& b);

 private:
  friend EvidentialNet LoadCheckpoint(const std::filesystem::path& path);
  EvidentialNet(const NetConfig& config, std::vector<NamedTensor> params);

  std::size_t Index(const std::string& name) const;
  NetConfig config_;
  std::vector<NamedTensor> params_;
  std::size_t encoder_param_count_ = 0;
};

NigParamMap HeadsToNigMap(const Tape& tape, const HeadVars& heads);

struct LocalPrediction {
  NigParamMap nig;
  Tensor recon;
  std::vector<Tensor> features;  // one per encoder level
};

// image: [N, C, H, W].
LocalPrediction ForwardLocal(const EvidentialNet& net, const Tensor& image);

// F^(i) = sum_m w_m^(i) * F_m^(i), with w^(i) the evidence weights pooled to
// level i's resolution.
std::vector<Tensor> FuseFeatures(
    std::span<const std::vector<Tensor>> per_source_features,
    const FusionWeights& full_resolution_weights);

struct GlobalPrediction {
  NigParamMap global;
  std::vector<NigParamMap> locals;
  std::vector<Tensor> fused_features;
};

// Locals come from each frozen per-source net; the global prediction is the
// fusion net's decoder applied to the evidence-weighted features.
GlobalPrediction ForwardGlobal(std::span<const EvidentialNet> nets,
                               const EvidentialNet& fusion_net,
                               std::span<const Tensor> inputs);

// Checkpoint: "EVNT", u32 version, NetConfig, named-shape manifest, then the
// little-endian float64 payload of every tensor in manifest order.
void SaveCheckpoint(const std::filesystem::path& path, const EvidentialNet& net);
EvidentialNet LoadCheckpoint(const std::filesystem::path& path);

// Fully connected evidential regressor for 1-D inputs ([B, 1] -> four
// [B, 1] heads). Used for the cubic toy benchmark.
struct MlpConfig {
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::uint64_t seed = 0;
};

class EvidentialMlp {
 public:
  explicit EvidentialMlp(const MlpConfig& config);

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }

  BoundParams Bind(Tape& tape, bool trainable) const;
  // x: [B, 1]. The recon head is unused and aliases gamma.
  HeadVars Forward(Tape& tape, const BoundParams& p, Var x) const;
  NigParamMap Predict(const Tensor& x) const;

 private:
  MlpConfig config_;
  std::vector<NamedTensor> params_;
};

}  // namespace evfuse

#endif  // EVFUSE_NET_H_
