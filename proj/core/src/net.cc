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

#include "evfuse/net.h"

#include <cmath>

#include "evfuse/errors.h"
#include "evfuse/rng.h"
#include "evfuse/tensor_io.h"

namespace evfuse {

namespace {

constexpr double kLeakySlope = 0.2;
constexpr char kCheckpointMagic[4] = {'E', 'V', 'N', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
const char* const kHeadNames[] = {"gamma", "eta", "alpha", "beta", "recon"};

// Softplus underflows to exactly 0 below about -745 and 1 + softplus(x)
// rounds to exactly 1 below about -37, so a small floor keeps eta, beta > 0
// and alpha > 1 in floating point for any pre-activation.
constexpr double kHeadFloor = 1e-9;

void ConstrainedHeads(Tape& tape, Var eta, Var alpha, Var beta, HeadVars& out) {
  const Var floor = tape.Leaf(Tensor::Scalar(kHeadFloor));
  const Var one = tape.Leaf(Tensor::Scalar(1.0 + kHeadFloor));
  out.eta = tape.Add(tape.Softplus(eta), floor);
  out.alpha = tape.Add(tape.Softplus(alpha), one);
  out.beta = tape.Add(tape.Softplus(beta), floor);
}

Tensor GaussianTensor(Shape shape, double stddev, CounterRng rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.Normal(0.0, stddev);
  return t;
}

// He initialization for leaky-rectifier layers, plain 1/fan_in for the
// linear heads.
double InitStddev(std::size_t fan_in, bool rectified) {
  const double gain = rectified ? 2.0 / (1.0 + kLeakySlope * kLeakySlope) : 1.0;
  return std::sqrt(gain / static_cast<double>(fan_in));
}

std::vector<NamedTensor> BuildParameters(const NetConfig& c, bool random) {
  struct Spec {
    std::string name;
    Shape shape;
    bool rectified;
  };
  const std::size_t ch = c.base_channels;
  std::vector<Spec> specs;
  auto conv = [&](const std::string& name, std::size_t in, std::size_t out,
                  bool rectified) {
    specs.push_back({name + ".w", {out, in, 3, 3}, rectified});
    specs.push_back({name + ".b", {out}, rectified});
  };
  conv("enc.0.conv0", c.input_channels, ch, true);
  conv("enc.0.conv1", ch, ch, true);
  for (std::size_t i = 1; i < c.levels; ++i) {
    conv("enc." + std::to_string(i) + ".conv", ch, ch, true);
  }
  for (std::size_t i = c.levels - 1; i >= 1; --i) {
    conv("dec." + std::to_string(i) + ".conv", 2 * ch, ch, true);
  }
  for (const char* head : kHeadNames) {
    conv(std::string("head.") + head, ch, 1, false);
  }

  std::vector<NamedTensor> params;
  CounterRng root(c.seed);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const Spec& s = specs[i];
    const bool is_bias = s.shape.size() == 1;
    if (!random || is_bias) {
      params.push_back({s.name, Tensor(s.shape)});
      continue;
    }
    const std::size_t fan_in = s.shape[1] * 9;
    params.push_back({s.name, GaussianTensor(s.shape, InitStddev(fan_in, s.rectified),
                                             root.Split(i))});
  }
  return params;
}

std::size_t EncoderParamCount(const NetConfig& c) { return 4 + 2 * (c.levels - 1); }

}  // namespace

void NetConfig::Validate() const {
  if (levels < 2) throw ConstraintError("NetConfig: levels must be >= 2");
  if (base_channels < 4) {
    throw ConstraintError("NetConfig: base_channels must be >= 4");
  }
  if (input_channels < 1) {
    throw ConstraintError("NetConfig: input_channels must be >= 1");
  }
}

EvidentialNet::EvidentialNet(const NetConfig& config) : config_(config) {
  config_.Validate();
  params_ = BuildParameters(config_, /*random=*/true);
  encoder_param_count_ = EncoderParamCount(config_);
}

EvidentialNet::EvidentialNet(const NetConfig& config,
                             std::vector<NamedTensor> params)
    : config_(config),
      params_(std::move(params)),
      encoder_param_count_(EncoderParamCount(config)) {}

std::size_t EvidentialNet::ParameterCount() const {
  std::size_t n = 0;
  for (const NamedTensor& p : params_) n += p.value.size();
  return n;
}

bool EvidentialNet::IsEncoderParameter(std::size_t index) const {
  return index < encoder_param_count_;
}

std::size_t EvidentialNet::Index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named " + name);
}

void EvidentialNet::CheckInputShape(const Shape& shape) const {
  const std::size_t factor = std::size_t{1} << (config_.levels - 1);
  if (shape.size() != 4 || shape[1] != config_.input_channels ||
      shape[2] % factor != 0 || shape[3] % factor != 0) {
    throw ShapeError("EvidentialNet: input " + ShapeToString(shape) +
                     " must be [N, " + std::to_string(config_.input_channels) +
                     ", H, W] with H, W divisible by " + std::to_string(factor));
  }
}

BoundParams EvidentialNet::Bind(Tape& tape, bool train_encoder,
                                bool train_decoder) const {
  BoundParams bound;
  bound.vars.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const bool trainable = IsEncoderParameter(i) ? train_encoder : train_decoder;
    bound.vars.push_back(tape.Leaf(params_[i].value, trainable));
  }
  return bound;
}

std::vector<Var> EvidentialNet::Encode(Tape& tape, const BoundParams& p,
                                       Var image) const {
  CheckInputShape(tape.value(image).shape());
  auto conv = [&](Var x, const std::string& name) {
    const std::size_t w = Index(name + ".w");
    return tape.LeakyRelu(tape.Conv3x3(x, p.vars[w], p.vars[w + 1]), kLeakySlope);
  };
  std::vector<Var> features;
  features.push_back(conv(conv(image, "enc.0.conv0"), "enc.0.conv1"));
  for (std::size_t i = 1; i < config_.levels; ++i) {
    features.push_back(conv(tape.AvgPool2x(features.back()),
                            "enc." + std::to_string(i) + ".conv"));
  }
  return features;
}

HeadVars EvidentialNet::Decode(Tape& tape, const BoundParams& p,
                               std::span<const Var> features) const {
  if (features.size() != config_.levels) {
    throw ShapeError("EvidentialNet::Decode: expected " +
                     std::to_string(config_.levels) + " feature levels");
  }
  auto conv = [&](Var x, const std::string& name) {
    const std::size_t w = Index(name + ".w");
    return tape.Conv3x3(x, p.vars[w], p.vars[w + 1]);
  };
  Var d = features.back();
  for (std::size_t i = config_.levels - 1; i >= 1; --i) {
    Var merged = tape.ConcatChannels(tape.Upsample2x(d), features[i - 1]);
    d = tape.LeakyRelu(conv(merged, "dec." + std::to_string(i) + ".conv"),
                       kLeakySlope);
  }
  HeadVars out;
  out.gamma = conv(d, "head.gamma");
  ConstrainedHeads(tape, conv(d, "head.eta"), conv(d, "head.alpha"),
                   conv(d, "head.beta"), out);
  out.recon = conv(d, "head.recon");
  return out;
}

bool operator==(const EvidentialNet& a, const EvidentialNet& b) {
  if (!(a.config_ == b.config_) || a.params_.size() != b.params_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name ||
        !(a.params_[i].value == b.params_[i].value)) {
      return false;
    }
  }
  return true;
}

NigParamMap HeadsToNigMap(const Tape& tape, const HeadVars& heads) {
  return NigParamMap(tape.value(heads.gamma), tape.value(heads.eta),
                     tape.value(heads.alpha), tape.value(heads.beta));
}

LocalPrediction ForwardLocal(const EvidentialNet& net, const Tensor& image) {
  Tape tape;
  const BoundParams p = net.Bind(tape, false, false);
  const Var x = tape.Leaf(image);
  const std::vector<Var> features = net.Encode(tape, p, x);
  const HeadVars heads = net.Decode(tape, p, features);
  LocalPrediction out{HeadsToNigMap(tape, heads), tape.value(heads.recon), {}};
  for (Var f : features) out.features.push_back(tape.value(f));
  return out;
}

std::vector<Tensor> FuseFeatures(
    std::span<const std::vector<Tensor>> per_source_features,
    const FusionWeights& full_resolution_weights) {
  if (per_source_features.empty() ||
      per_source_features.size() != full_resolution_weights.weights.size()) {
    throw ShapeError("FuseFeatures: need one feature list per weight map");
  }
  const std::size_t levels = per_source_features[0].size();
  const std::size_t full_h = full_resolution_weights.weights[0].shape()[2];
  std::vector<Tensor> fused;
  for (std::size_t level = 0; level < levels; ++level) {
    const Shape& fshape = per_source_features[0][level].shape();
    const FusionWeights w =
        PoolWeights(full_resolution_weights, full_h / fshape[2]);
    Tensor out(fshape);
    const std::size_t n_batch = fshape[0], channels = fshape[1];
    const std::size_t plane = fshape[2] * fshape[3];
    for (std::size_t m = 0; m < per_source_features.size(); ++m) {
      const Tensor& f = per_source_features[m].at(level);
      RequireSameShape(f, out, "FuseFeatures");
      const Tensor& wm = w.weights[m];
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = (n * channels + c) * plane + i;
            out[idx] += wm[n * plane + i] * f[idx];
          }
    }
    fused.push_back(std::move(out));
  }
  return fused;
}

GlobalPrediction ForwardGlobal(std::span<const EvidentialNet> nets,
                               const EvidentialNet& fusion_net,
                               std::span<const Tensor> inputs) {
  if (nets.size() < 2 || nets.size() != inputs.size()) {
    throw ShapeError("ForwardGlobal: need M >= 2 nets and one input per net");
  }
  GlobalPrediction out{NigParamMap::Uniform({1}, NigParams(0, 1, 2, 1)), {}, {}};
  std::vector<std::vector<Tensor>> features;
  for (std::size_t m = 0; m < nets.size(); ++m) {
    LocalPrediction local = ForwardLocal(nets[m], inputs[m]);
    out.locals.push_back(std::move(local.nig));
    features.push_back(std::move(local.features));
  }
  out.fused_features = FuseFeatures(features, EvidenceWeights(out.locals));

  Tape tape;
  const BoundParams p = fusion_net.Bind(tape, false, false);
  std::vector<Var> fvars;
  for (const Tensor& f : out.fused_features) fvars.push_back(tape.Leaf(f));
  out.global = HeadsToNigMap(tape, fusion_net.Decode(tape, p, fvars));
  return out;
}

void SaveCheckpoint(const std::filesystem::path& path, const EvidentialNet& net) {
  const NetConfig& c = net.config();
  std::string out(kCheckpointMagic, 4);
  AppendU32(out, kCheckpointVersion);
  AppendU32(out, static_cast<std::uint32_t>(c.levels));
  AppendU32(out, static_cast<std::uint32_t>(c.base_channels));
  AppendU32(out, static_cast<std::uint32_t>(c.input_channels));
  AppendU64(out, c.seed);
  AppendU32(out, static_cast<std::uint32_t>(net.parameters().size()));
  for (const NamedTensor& p : net.parameters()) {
    AppendU32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    AppendU32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) AppendU64(out, d);
  }
  for (const NamedTensor& p : net.parameters()) {
    for (double v : p.value.values()) AppendF64(out, v);
  }
  WriteFileAtomic(path, out);
}

EvidentialNet LoadCheckpoint(const std::filesystem::path& path) {
  const std::string bytes = ReadFile(path);
  const std::string what = "checkpoint " + path.string();
  ByteReader in(bytes, what);
  if (in.Bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(what + ": bad magic (expected 'EVNT')");
  }
  const std::uint32_t version = in.U32();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  NetConfig config;
  config.levels = in.U32();
  config.base_channels = in.U32();
  config.input_channels = in.U32();
  config.seed = in.U64();
  try {
    config.Validate();
  } catch (const ConstraintError& e) {
    throw FormatError(what + ": " + e.what());
  }
  std::vector<NamedTensor> expected = BuildParameters(config, /*random=*/false);
  const std::uint32_t count = in.U32();
  if (count != expected.size()) {
    throw FormatError(what + ": manifest lists " + std::to_string(count) +
                      " tensors, architecture has " +
                      std::to_string(expected.size()));
  }
  for (NamedTensor& p : expected) {
    const std::string name(in.Bytes(in.U32()));
    Shape shape(in.U32());
    for (std::size_t& d : shape) d = in.U64();
    if (name != p.name || shape != p.value.shape()) {
      throw FormatError(what + ": manifest entry '" + name + "' " +
                        ShapeToString(shape) + " does not match '" + p.name +
                        "' " + ShapeToString(p.value.shape()));
    }
  }
  for (NamedTensor& p : expected) {
    for (double& v : p.value.values()) v = in.F64();
  }
  if (in.remaining() != 0) throw FormatError(what + ": trailing bytes");
  return EvidentialNet(config, std::move(expected));
}

EvidentialMlp::EvidentialMlp(const MlpConfig& config) : config_(config) {
  if (config.hidden < 1 || config.hidden_layers < 1) {
    throw ConstraintError("MlpConfig: need hidden >= 1 and hidden_layers >= 1");
  }
  CounterRng root(config.seed);
  std::size_t stream = 0;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out,
                   bool rectified) {
    params_.push_back({name + ".w", GaussianTensor({in, out},
                                                   InitStddev(in, rectified),
                                                   root.Split(stream++))});
    params_.push_back({name + ".b", Tensor({1, out})});
  };
  dense("fc.0", 1, config.hidden, true);
  for (std::size_t i = 1; i < config.hidden_layers; ++i) {
    dense("fc." + std::to_string(i), config.hidden, config.hidden, true);
  }
  for (int h = 0; h < 4; ++h) {
    dense(std::string("head.") + kHeadNames[h], config.hidden, 1, false);
  }
}

BoundParams EvidentialMlp::Bind(Tape& tape, bool trainable) const {
  BoundParams bound;
  for (const NamedTensor& p : params_) {
    bound.vars.push_back(tape.Leaf(p.value, trainable));
  }
  return bound;
}

HeadVars EvidentialMlp::Forward(Tape& tape, const BoundParams& p, Var x) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.dim(1) != 1) {
    throw ShapeError("EvidentialMlp: input must be [B, 1], got " +
                     ShapeToString(xv.shape()));
  }
  auto dense = [&](Var in, std::size_t index) {
    return tape.Add(tape.MatMul(in, p.vars[index]), p.vars[index + 1]);
  };
  Var h = x;
  std::size_t index = 0;
  for (std::size_t i = 0; i < config_.hidden_layers; ++i, index += 2) {
    h = tape.LeakyRelu(dense(h, index), kLeakySlope);
  }
  HeadVars out;
  out.gamma = dense(h, index);
  ConstrainedHeads(tape, dense(h, index + 2), dense(h, index + 4),
                   dense(h, index + 6), out);
  out.recon = out.gamma;
  return out;
}

NigParamMap EvidentialMlp::Predict(const Tensor& x) const {
  Tape tape;
  const BoundParams p = Bind(tape, false);
  return HeadsToNigMap(tape, Forward(tape, p, tape.Leaf(x)));
}

}  // namespace evfuse
