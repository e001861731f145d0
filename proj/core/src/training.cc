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

#include "evfuse/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <utility>

#include "evfuse/autodiff.h"
#include "evfuse/errors.h"
#include "evfuse/fusion.h"
#include "evfuse/losses.h"
#include "evfuse/optim.h"
#include "evfuse/rng.h"
#include "evfuse/tensor_io.h"

namespace evfuse {

namespace {

constexpr std::uint64_t kStage1Stream = 100;
constexpr std::uint64_t kStage2Stream = 200;
constexpr std::uint64_t kCubicStream = 300;

// Draws batches from a per-epoch Fisher-Yates reshuffle of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, CounterRng rng)
      : order_(n), batch_(std::min(batch, n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
  }

  std::vector<std::size_t> Next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == 0 || pos_ >= order_.size()) Reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void Reshuffle() {
    CounterRng r = rng_.Split(epoch_++);
    for (std::size_t i = order_.size() - 1; i > 0; --i) {
      std::swap(order_[i], order_[r.Below(i + 1)]);
    }
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  CounterRng rng_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
};

std::uint64_t RestartPeriod(const TrainConfig& c, std::uint64_t iters) {
  if (c.restart_period > 0) return c.restart_period;
  return std::max<std::uint64_t>(1, (iters + 6) / 7);
}

Tensor Scaled(const Tensor& t, double s) {
  Tensor out = t;
  for (double& v : out.values()) v *= s;
  return out;
}

void AddInPlace(Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "gradient accumulation");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void RequireFinite(double loss, const char* stage, std::uint64_t iter) {
  if (!std::isfinite(loss)) {
    throw NonFiniteError(std::string(stage) + ": non-finite loss at iteration " +
                         std::to_string(iter) + "; aborting");
  }
}

// Sum |a - b| and its subgradient sign(a - b) (0 at a tie).
double L1WithSign(const Tensor& a, const Tensor& b, Tensor& sign) {
  RequireSameShape(a, b, "L1");
  sign = Tensor(a.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a[i] - b[i];
    sum += std::abs(r);
    sign[i] = r > 0.0 ? 1.0 : r < 0.0 ? -1.0 : 0.0;
  }
  return sum;
}

std::vector<std::pair<Var, Tensor>> HeadSeeds(const HeadVars& h,
                                              const NigGradients& g,
                                              double scale) {
  std::vector<std::pair<Var, Tensor>> seeds;
  seeds.emplace_back(h.gamma, Scaled(g.gamma, scale));
  seeds.emplace_back(h.eta, Scaled(g.eta, scale));
  seeds.emplace_back(h.alpha, Scaled(g.alpha, scale));
  seeds.emplace_back(h.beta, Scaled(g.beta, scale));
  return seeds;
}

void ApplyAdam(std::vector<NamedTensor>& params, const Tape& tape,
               const BoundParams& bound, const std::vector<std::size_t>& which,
               AdamState& state, double lr) {
  std::vector<Tensor*> ptrs;
  std::vector<Tensor> grads;
  for (std::size_t i : which) {
    ptrs.push_back(&params[i].value);
    grads.push_back(tape.grad(bound.vars[i]));
  }
  AdamStep(ptrs, grads, state, lr);
}

Tensor AsBatchImage(const Tensor& image) {
  if (image.rank() != 2) {
    throw ShapeError("expected a 2-D image, got " + ShapeToString(image.shape()));
  }
  return Preprocess(image).Reshaped({1, 1, image.dim(0), image.dim(1)});
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) {
    throw ConstraintError("train: learning rates must be > 0");
  }
  if (!(lambda_pix >= 0.0) || !(lambda_nig >= 0.0) || !(lambda_r_max >= 0.0)) {
    throw ConstraintError("train: all lambda weights must be >= 0");
  }
  if (batch < 1) throw ConstraintError("train.batch must be >= 1");
  if (!(restart_mult >= 1.0)) {
    throw ConstraintError("train.restart_mult must be >= 1");
  }
}

double LambdaRamp(std::uint64_t iter, std::uint64_t total_iters,
                  double lambda_r_max) {
  if (iter > total_iters) {
    throw ConstraintError("LambdaRamp: iter " + std::to_string(iter) +
                          " exceeds total " + std::to_string(total_iters));
  }
  if (total_iters == 0) return 0.0;
  return lambda_r_max * static_cast<double>(iter) /
         static_cast<double>(total_iters);
}

void WriteLogCsv(const std::filesystem::path& path, const TrainLog& log) {
  std::string out = "iter,lr,lambda_r,loss_total,loss_nll,loss_reg,loss_pix\n";
  char buf[256];
  for (const LogRow& r : log) {
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(r.iter), r.lr, r.lambda_r,
                  r.loss_total, r.loss_nll, r.loss_reg, r.loss_pix);
    out += buf;
  }
  WriteFileAtomic(path, out);
}

TrainLog ReadLogCsv(const std::filesystem::path& path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  std::getline(in, line);
  if (line != "iter,lr,lambda_r,loss_total,loss_nll,loss_reg,loss_pix") {
    throw FormatError(path.string() + ": unexpected training-log header");
  }
  TrainLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogRow r;
    unsigned long long iter = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf,%lf", &iter, &r.lr,
                    &r.lambda_r, &r.loss_total, &r.loss_nll, &r.loss_reg,
                    &r.loss_pix) != 7) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    r.iter = iter;
    log.push_back(r);
  }
  return log;
}

PreparedSample Prepare(const MultimodalSample& sample) {
  PreparedSample out;
  for (const Tensor& s : sample.sources) out.sources.push_back(AsBatchImage(s));
  out.target = AsBatchImage(sample.target);
  out.mask = sample.enhancing_mask.Reshaped(out.target.shape());
  return out;
}

std::vector<PreparedSample> PrepareAll(const std::vector<MultimodalSample>& samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const MultimodalSample& s : samples) out.push_back(Prepare(s));
  return out;
}

Tensor StackBatch(const std::vector<const Tensor*>& items) {
  if (items.empty()) throw ShapeError("StackBatch: no items");
  const Shape& first = items[0]->shape();
  if (first.empty() || first[0] != 1) {
    throw ShapeError("StackBatch: items must have a leading batch dim of 1");
  }
  Shape shape = first;
  shape[0] = items.size();
  std::vector<double> data;
  data.reserve(NumElements(shape));
  for (const Tensor* t : items) {
    if (t->shape() != first) throw ShapeError("StackBatch: shape mismatch");
    data.insert(data.end(), t->values().begin(), t->values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Stage1Result TrainStage1(const std::vector<PreparedSample>& train,
                         std::size_t modality, const NetConfig& net_config,
                         const TrainConfig& config) {
  config.Validate();
  if (train.empty()) throw ConstraintError("stage I: empty training set");
  if (modality >= train[0].sources.size()) {
    throw ConstraintError("stage I: modality " + std::to_string(modality) +
                          " out of range");
  }
  NetConfig nc = net_config;
  nc.seed = net_config.seed + modality;
  Stage1Result result{EvidentialNet(nc), {}};
  EvidentialNet& net = result.net;
  net.CheckInputShape(train[0].target.shape());

  const std::uint64_t iters = config.iters_stage1;
  const std::uint64_t period = RestartPeriod(config, iters);
  std::vector<std::size_t> all(net.parameters().size());
  std::iota(all.begin(), all.end(), 0);
  BatchSampler sampler(train.size(), config.batch,
                       CounterRng(config.seed, kStage1Stream + modality));
  AdamState state;

  for (std::uint64_t it = 0; it < iters; ++it) {
    const double lr = CosineWarmRestartLr(it, config.lr_stage1, period,
                                          config.restart_mult);
    const double lambda_r =
        LambdaRamp(it, iters > 0 ? iters - 1 : 0, config.lambda_r_max);
    std::vector<const Tensor*> xs, ys;
    for (std::size_t i : sampler.Next()) {
      xs.push_back(&train[i].sources[modality]);
      ys.push_back(&train[i].target);
    }
    const Tensor x = StackBatch(xs);
    const Tensor y = StackBatch(ys);

    Tape tape;
    const BoundParams p = net.Bind(tape, true, true);
    const std::vector<Var> features = net.Encode(tape, p, tape.Leaf(x));
    const HeadVars heads = net.Decode(tape, p, features);
    const LossWeights weights{config.lambda_nig, config.lambda_nig * lambda_r,
                              config.lambda_pix};
    const LossAndGradients lg =
        ComputeLossAndGradients(HeadsToNigMap(tape, heads), y, weights);
    Tensor recon_sign;
    const double recon_l1 = L1WithSign(tape.value(heads.recon), x, recon_sign);

    const double scale = 1.0 / static_cast<double>(y.size());
    const double total = (lg.total + config.lambda_pix * recon_l1) * scale;
    RequireFinite(total, "stage I", it);

    auto seeds = HeadSeeds(heads, lg.grads, scale);
    seeds.emplace_back(heads.recon, Scaled(recon_sign, config.lambda_pix * scale));
    tape.Backward(seeds);
    ApplyAdam(net.parameters(), tape, p, all, state, lr);

    result.log.push_back({it, lr, lambda_r, total, lg.breakdown.nll * scale,
                          lg.breakdown.regularizer * scale,
                          (lg.breakdown.pixel_l1 + recon_l1) * scale});
  }
  return result;
}

std::string FusionModeName(FusionMode mode) {
  switch (mode) {
    case FusionMode::kLocalOnly: return "local-only";
    case FusionMode::kGlobalOnly: return "global-only";
    case FusionMode::kCombined: return "combined";
  }
  return "combined";
}

FusionMode ParseFusionMode(const std::string& name) {
  if (name == "local-only") return FusionMode::kLocalOnly;
  if (name == "global-only") return FusionMode::kGlobalOnly;
  if (name == "combined") return FusionMode::kCombined;
  throw ConstraintError("unknown fusion mode '" + name +
                        "' (expected local-only, global-only or combined)");
}

Stage2Result TrainStage2(const std::vector<EvidentialNet>& local_nets,
                         const std::vector<PreparedSample>& train,
                         FusionMode mode, const TrainConfig& config) {
  config.Validate();
  const std::size_t n_src = local_nets.size();
  if (n_src < 2) throw ConstraintError("stage II: need at least two stage-I nets");
  if (train.empty()) throw ConstraintError("stage II: empty training set");
  if (train[0].sources.size() != n_src) {
    throw ConstraintError("stage II: dataset has " +
                          std::to_string(train[0].sources.size()) +
                          " sources but " + std::to_string(n_src) +
                          " stage-I nets were given");
  }
  Stage2Result result{local_nets, local_nets[0], {}};
  std::vector<EvidentialNet>& locals = result.local_nets;
  EvidentialNet& fusion = result.fusion_net;
  const bool train_locals = mode != FusionMode::kGlobalOnly;
  const bool use_global = mode != FusionMode::kLocalOnly;

  // Encoders are frozen, so their features are constants.
  std::vector<std::vector<std::vector<Tensor>>> features(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t m = 0; m < n_src; ++m) {
      features[i].push_back(ForwardLocal(locals[m], train[i].sources[m]).features);
    }
  }

  std::vector<EvidentialNet*> nets;
  for (EvidentialNet& n : locals) nets.push_back(&n);
  nets.push_back(&fusion);
  const std::uint64_t iters = config.iters_stage2;
  const std::uint64_t period = RestartPeriod(config, iters);
  BatchSampler sampler(train.size(), config.batch,
                       CounterRng(config.seed, kStage2Stream));
  AdamState state;
  const std::size_t levels = fusion.config().levels;

  for (std::uint64_t it = 0; it < iters; ++it) {
    const double lr = CosineWarmRestartLr(it, config.lr_stage2, period,
                                          config.restart_mult);
    const double lambda_r =
        LambdaRamp(it, iters > 0 ? iters - 1 : 0, config.lambda_r_max);
    const std::vector<std::size_t> idx = sampler.Next();
    std::vector<const Tensor*> ys;
    for (std::size_t i : idx) ys.push_back(&train[i].target);
    const Tensor y = StackBatch(ys);

    Tape tape;
    std::vector<BoundParams> bound;
    for (std::size_t m = 0; m < n_src; ++m) {
      bound.push_back(locals[m].Bind(tape, false, train_locals));
    }
    bound.push_back(fusion.Bind(tape, false, use_global));

    std::vector<std::vector<Tensor>> batch_features(n_src);
    std::vector<HeadVars> local_heads;
    std::vector<NigParamMap> local_maps;
    for (std::size_t m = 0; m < n_src; ++m) {
      std::vector<Var> fvars;
      for (std::size_t level = 0; level < levels; ++level) {
        std::vector<const Tensor*> fs;
        for (std::size_t i : idx) fs.push_back(&features[i][m][level]);
        batch_features[m].push_back(StackBatch(fs));
        fvars.push_back(tape.Leaf(batch_features[m].back()));
      }
      local_heads.push_back(locals[m].Decode(tape, bound[m], fvars));
      local_maps.push_back(HeadsToNigMap(tape, local_heads.back()));
    }

    const LossWeights weights{config.lambda_nig, config.lambda_nig * lambda_r,
                              config.lambda_pix};
    double total = 0.0, nll = 0.0, reg = 0.0, pix = 0.0;
    auto accumulate = [&](const LossAndGradients& lg) {
      total += lg.total;
      nll += lg.breakdown.nll;
      reg += lg.breakdown.regularizer;
      pix += lg.breakdown.pixel_l1;
    };

    // Left fold with every partial kept for the backward pass.
    std::vector<NigParamMap> partial{local_maps[0]};
    for (std::size_t m = 1; m < n_src; ++m) {
      partial.push_back(MonigPair(partial.back(), local_maps[m]));
    }
    std::optional<HeadVars> global_heads;
    std::optional<NigParamMap> global;
    if (use_global) {
      const std::vector<Tensor> fused =
          FuseFeatures(batch_features, EvidenceWeights(local_maps));
      std::vector<Var> fvars;
      for (const Tensor& f : fused) fvars.push_back(tape.Leaf(f));
      global_heads = fusion.Decode(tape, bound[n_src], fvars);
      global = HeadsToNigMap(tape, *global_heads);
    }

    std::vector<NigGradients> local_grads;
    std::optional<NigGradients> global_grads;
    if (use_global) {
      LossAndGradients lg = ComputeLossAndGradients(*global, y, weights);
      accumulate(lg);
      global_grads = std::move(lg.grads);
    }
    if (mode != FusionMode::kGlobalOnly) {
      NigGradients upstream;
      if (use_global) {
        const NigParamMap combined = MonigPair(partial.back(), *global);
        LossAndGradients lc = ComputeLossAndGradients(combined, y, weights);
        accumulate(lc);
        PairGradients back = MonigPairBackward(partial.back(), *global, lc.grads);
        AddInPlace(global_grads->gamma, back.b.gamma);
        AddInPlace(global_grads->eta, back.b.eta);
        AddInPlace(global_grads->alpha, back.b.alpha);
        AddInPlace(global_grads->beta, back.b.beta);
        upstream = std::move(back.a);
      } else {
        LossAndGradients lc = ComputeLossAndGradients(partial.back(), y, weights);
        accumulate(lc);
        upstream = std::move(lc.grads);
      }
      local_grads.resize(n_src);
      for (std::size_t m = n_src - 1; m >= 1; --m) {
        PairGradients back = MonigPairBackward(partial[m - 1], local_maps[m], upstream);
        local_grads[m] = std::move(back.b);
        upstream = std::move(back.a);
      }
      local_grads[0] = std::move(upstream);
    }

    const double scale = 1.0 / static_cast<double>(y.size());
    RequireFinite(total * scale, "stage II", it);
    std::vector<std::pair<Var, Tensor>> seeds;
    for (std::size_t m = 0; m < local_grads.size(); ++m) {
      for (auto& s : HeadSeeds(local_heads[m], local_grads[m], scale)) {
        seeds.push_back(std::move(s));
      }
    }
    if (global_grads) {
      for (auto& s : HeadSeeds(*global_heads, *global_grads, scale)) {
        seeds.push_back(std::move(s));
      }
    }
    tape.Backward(seeds);

    std::vector<Tensor*> ptrs;
    std::vector<Tensor> grads;
    for (std::size_t k = 0; k < nets.size(); ++k) {
      const bool trainable = k < n_src ? train_locals : use_global;
      if (!trainable) continue;
      auto& params = nets[k]->parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (nets[k]->IsEncoderParameter(i)) continue;
        ptrs.push_back(&params[i].value);
        grads.push_back(tape.grad(bound[k].vars[i]));
      }
    }
    AdamStep(ptrs, grads, state, lr);
    result.log.push_back({it, lr, lambda_r, total * scale, nll * scale,
                          reg * scale, pix * scale});
  }
  return result;
}

PipelinePrediction PredictPipeline(const std::vector<EvidentialNet>& local_nets,
                                   const EvidentialNet& fusion_net,
                                   FusionMode mode, const PreparedSample& sample) {
  if (mode == FusionMode::kLocalOnly) {
    std::vector<NigParamMap> locals;
    for (std::size_t m = 0; m < local_nets.size(); ++m) {
      locals.push_back(ForwardLocal(local_nets[m], sample.sources.at(m)).nig);
    }
    NigParamMap fused = MonigFold(locals);
    return {std::move(fused), std::move(locals)};
  }
  GlobalPrediction g = ForwardGlobal(local_nets, fusion_net, sample.sources);
  if (mode == FusionMode::kGlobalOnly) return {g.global, std::move(g.locals)};
  NigParamMap fused = CombineLocalGlobal(g.locals, g.global);
  return {std::move(fused), std::move(g.locals)};
}

CubicData MakeCubicData(std::size_t n, double x_lo, double x_hi, double noise_sd,
                        std::uint64_t seed, std::uint64_t stream) {
  CounterRng rng(seed, stream);
  CubicData d{Tensor({n, 1}), Tensor({n, 1})};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.Uniform(x_lo, x_hi);
    d.x[i] = x;
    d.y[i] = x * x * x + noise_sd * rng.Normal();
  }
  return d;
}

NigParamMap PredictCubic(const CubicResult& result, const Tensor& x) {
  const NigParamMap m = result.model.Predict(x);
  const double s = result.y_scale;
  return NigParamMap(Scaled(m.gamma(), s), m.eta(), m.alpha(),
                     Scaled(m.beta(), s * s));
}

CubicResult TrainCubic(const CubicConfig& config) {
  if (config.n_train < 2 || config.n_val < 1 || config.batch < 1 ||
      !(config.lr > 0.0) || !(config.x_hi > config.x_lo)) {
    throw ConstraintError("CubicConfig: invalid sizes, range or learning rate");
  }
  const CubicData train = MakeCubicData(config.n_train, config.x_lo, config.x_hi,
                                        config.noise_sd, config.seed, kCubicStream);
  const CubicData val = MakeCubicData(config.n_val, config.x_lo, config.x_hi,
                                      config.noise_sd, config.seed,
                                      kCubicStream + 1);
  const double mean = train.y.Mean();
  double ss = 0.0;
  for (double v : train.y.values()) ss += (v - mean) * (v - mean);

  CubicResult result{EvidentialMlp(MlpConfig{config.hidden, 2, config.seed}),
                     std::sqrt(ss / static_cast<double>(config.n_train)), 0.0,
                     0.0, {}};
  auto val_nll = [&] {
    return NllLoss(PredictCubic(result, val.x), val.y).total /
           static_cast<double>(config.n_val);
  };
  result.initial_val_nll = val_nll();

  const Tensor y_scaled = Scaled(train.y, 1.0 / result.y_scale);
  std::vector<std::size_t> all(result.model.parameters().size());
  std::iota(all.begin(), all.end(), 0);
  BatchSampler sampler(config.n_train, config.batch,
                       CounterRng(config.seed, kCubicStream + 2));
  AdamState state;
  const LossWeights weights{1.0, config.lambda_r, 0.0};
  for (std::uint64_t it = 0; it < config.iters; ++it) {
    const std::vector<std::size_t> idx = sampler.Next();
    Tensor xb({idx.size(), 1}), yb({idx.size(), 1});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xb[k] = train.x[idx[k]];
      yb[k] = y_scaled[idx[k]];
    }
    Tape tape;
    const BoundParams p = result.model.Bind(tape, true);
    const HeadVars heads = result.model.Forward(tape, p, tape.Leaf(xb));
    const LossAndGradients lg =
        ComputeLossAndGradients(HeadsToNigMap(tape, heads), yb, weights);
    const double scale = 1.0 / static_cast<double>(idx.size());
    RequireFinite(lg.total * scale, "cubic", it);
    tape.Backward(HeadSeeds(heads, lg.grads, scale));
    ApplyAdam(result.model.parameters(), tape, p, all, state, config.lr);
    result.log.push_back({it, config.lr, config.lambda_r, lg.total * scale,
                          lg.breakdown.nll * scale,
                          lg.breakdown.regularizer * scale,
                          lg.breakdown.pixel_l1 * scale});
  }
  result.final_val_nll = val_nll();
  return result;
}

}  // namespace evfuse
