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

#include "evfuse/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "evfuse/errors.h"
#include "evfuse/parallel.h"
#include "evfuse/rng.h"
#include "evfuse/tensor_io.h"

namespace evfuse {

namespace {

constexpr std::size_t kFieldWaves = 12;
constexpr std::size_t kTissueBlobs = 4;
constexpr double kFieldAmplitude = 0.06;
constexpr double kSourceSlope = 14.0;
constexpr double kPeritumoralShift = 0.35;
constexpr double kEdgeWidth = 0.2;

struct Ellipse {
  double cx, cy, ax, ay, cos_t, sin_t;

  // Normalized radius: < 1 inside, 1 on the boundary.
  double Radius(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / ax;
    const double v = (-dx * sin_t + dy * cos_t) / ay;
    return std::sqrt(u * u + v * v);
  }
  // 1 deep inside, 0 outside, smooth ramp of width kEdgeWidth at the edge.
  double Soft(double x, double y) const {
    const double t = std::clamp((1.0 - Radius(x, y)) / kEdgeWidth, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
  }
};

Ellipse RandomEllipse(CounterRng& rng, double cx, double cy, double a_lo,
                      double a_hi) {
  const double theta = rng.Uniform(0.0, std::numbers::pi);
  return {cx, cy, rng.Uniform(a_lo, a_hi), rng.Uniform(a_lo, a_hi),
          std::cos(theta), std::sin(theta)};
}

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Monotone contrast of modality m: a sigmoid centred on a different tissue
// intensity per modality, rescaled so f(0) = 0 and f(1) = 1.
double SourceContrast(double latent, std::size_t m, std::size_t n_modalities) {
  const double center =
      0.25 + 0.5 * static_cast<double>(m) / static_cast<double>(n_modalities - 1);
  const double lo = Sigmoid(-kSourceSlope * center);
  const double hi = Sigmoid(kSourceSlope * (1.0 - center));
  return (Sigmoid(kSourceSlope * (latent - center)) - lo) / (hi - lo);
}

}  // namespace

void SynthConfig::Validate() const {
  if (image_size < 16) {
    throw ConstraintError("data.image_size must be >= 16, got " +
                          std::to_string(image_size));
  }
  if (n_modalities < 2) {
    throw ConstraintError("data.n_modalities must be >= 2, got " +
                          std::to_string(n_modalities));
  }
  if (n_subjects < 3) {
    throw ConstraintError("data.n_subjects must be >= 3 (one per split), got " +
                          std::to_string(n_subjects));
  }
  if (!(lesion_rate >= 0.0 && lesion_rate <= 1.0)) {
    throw ConstraintError("data.lesion_rate must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConstraintError("data.noise_sigma must be finite and >= 0");
  }
}

MultimodalSample GenerateSubject(const SynthConfig& config,
                                 std::uint64_t subject_id) {
  const std::size_t n = config.image_size;
  const double size = static_cast<double>(n);
  CounterRng shape_rng = CounterRng(config.seed, subject_id).Split(0);
  CounterRng noise_rng = CounterRng(config.seed, subject_id).Split(1);

  const Ellipse head = RandomEllipse(shape_rng, 0.5 + shape_rng.Uniform(-0.03, 0.03),
                                     0.5 + shape_rng.Uniform(-0.03, 0.03),
                                     0.36, 0.44);

  struct Wave { double kx, ky, phase, amp; };
  std::vector<Wave> waves(kFieldWaves);
  for (Wave& w : waves) {
    const double freq = shape_rng.Uniform(0.5, 3.0);
    const double dir = shape_rng.Uniform(0.0, 2.0 * std::numbers::pi);
    w = {2.0 * std::numbers::pi * freq * std::cos(dir),
         2.0 * std::numbers::pi * freq * std::sin(dir),
         shape_rng.Uniform(0.0, 2.0 * std::numbers::pi),
         kFieldAmplitude * shape_rng.Normal()};
  }

  std::vector<Ellipse> blobs;
  std::vector<double> blob_level;
  for (std::size_t b = 0; b < kTissueBlobs; ++b) {
    const double r = 0.2 * std::sqrt(shape_rng.Uniform());
    const double phi = shape_rng.Uniform(0.0, 2.0 * std::numbers::pi);
    blobs.push_back(RandomEllipse(shape_rng, head.cx + r * std::cos(phi),
                                  head.cy + r * std::sin(phi), 0.06, 0.14));
    blob_level.push_back(shape_rng.Uniform(0.1, 0.95));
  }

  MultimodalSample s;
  s.subject_id = subject_id;
  s.has_lesion = shape_rng.Uniform() < config.lesion_rate;
  Ellipse edema{}, core{};
  double core_amp = 0.0;
  if (s.has_lesion) {
    const double r = 0.15 * std::sqrt(shape_rng.Uniform());
    const double phi = shape_rng.Uniform(0.0, 2.0 * std::numbers::pi);
    edema = RandomEllipse(shape_rng, head.cx + r * std::cos(phi),
                          head.cy + r * std::sin(phi), 0.10, 0.15);
    core = edema;
    core.ax *= shape_rng.Uniform(0.45, 0.65);
    core.ay *= shape_rng.Uniform(0.45, 0.65);
    core_amp = shape_rng.Uniform(0.6, 1.0);
  }

  Tensor latent({n, n});
  s.enhancing_mask = Tensor({n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / size;
      const double py = (static_cast<double>(y) + 0.5) / size;
      const double inside = head.Soft(px, py);
      if (inside <= 0.0) continue;
      double v = 0.45;
      for (const Wave& w : waves) v += w.amp * std::cos(w.kx * px + w.ky * py + w.phase);
      for (std::size_t b = 0; b < blobs.size(); ++b) {
        const double t = blobs[b].Soft(px, py);
        v = (1.0 - t) * v + t * blob_level[b];
      }
      if (s.has_lesion) {
        v += kPeritumoralShift * edema.Soft(px, py);
        if (core.Radius(px, py) < 1.0) s.enhancing_mask[y * n + x] = 1.0;
      }
      latent[y * n + x] = inside * std::clamp(v, 0.0, 1.2);
    }
  }

  s.sources.assign(config.n_modalities, Tensor({n, n}));
  for (std::size_t m = 0; m < config.n_modalities; ++m) {
    for (std::size_t i = 0; i < n * n; ++i) {
      s.sources[m][i] = SourceContrast(latent[i], m, config.n_modalities) +
                        config.noise_sigma * noise_rng.Normal();
    }
  }
  s.target = Tensor({n, n});
  for (std::size_t i = 0; i < n * n; ++i) {
    s.target[i] = latent[i] + core_amp * s.enhancing_mask[i] +
                  config.noise_sigma * noise_rng.Normal();
  }
  return s;
}

DatasetSplits GenerateDataset(const SynthConfig& config) {
  config.Validate();
  const std::size_t n = config.n_subjects;
  std::vector<MultimodalSample> all(n);
  ParallelFor(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) all[i] = GenerateSubject(config, i);
  });

  // Fisher-Yates with a dedicated stream, independent of subject streams.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng shuffle(config.seed, ~std::uint64_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[shuffle.Below(i + 1)]);
  }
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  const std::size_t n_test = n_val;
  const std::size_t n_train = n - n_val - n_test;

  DatasetSplits out;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_train ? out.train : k < n_train + n_val ? out.val : out.test;
    dst.push_back(std::move(all[order[k]]));
  }
  auto by_id = [](const MultimodalSample& a, const MultimodalSample& b) {
    return a.subject_id < b.subject_id;
  };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.val.begin(), out.val.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

double NearestRankPercentile(const Tensor& image, double q) {
  if (image.empty()) throw ShapeError("percentile of an empty image");
  std::vector<double> sorted = image.values();
  std::sort(sorted.begin(), sorted.end());
  const double rank = std::ceil(q * static_cast<double>(sorted.size()));
  const std::size_t index =
      rank < 1.0 ? 0 : std::min(sorted.size() - 1, static_cast<std::size_t>(rank) - 1);
  return sorted[index];
}

Tensor Preprocess(const Tensor& image) {
  if (image.empty()) throw ShapeError("preprocess: empty image");
  const double cap = NearestRankPercentile(image, 0.99);
  Tensor out = image;
  for (double& v : out.values()) v = std::min(v, cap);
  const double mean = out.Mean();
  double ss = 0.0;
  for (double v : out.values()) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(out.size()));
  if (!(sd > 0.0)) {
    out.Fill(0.0);
    return out;
  }
  for (double& v : out.values()) v = (v - mean) / sd;
  return out;
}

std::string SubjectDirName(std::uint64_t subject_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "subject_%04llu",
                static_cast<unsigned long long>(subject_id));
  return buf;
}

void WriteDataset(const std::filesystem::path& dir, const DatasetSplits& data,
                  const SynthConfig& config) {
  const std::pair<const char*, const std::vector<MultimodalSample>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [name, samples] : splits) {
    for (const MultimodalSample& s : *samples) {
      const auto sub = dir / name / SubjectDirName(s.subject_id);
      for (std::size_t m = 0; m < s.sources.size(); ++m) {
        WriteTensor(sub / ("source_" + std::to_string(m) + ".tnsr"), s.sources[m]);
      }
      WriteTensor(sub / "target.tnsr", s.target);
      WriteTensor(sub / "mask.tnsr", s.enhancing_mask);
      nlohmann::ordered_json meta;
      meta["subject_id"] = s.subject_id;
      meta["seed"] = config.seed;
      meta["lesion"] = s.has_lesion;
      meta["n_modalities"] = s.sources.size();
      WriteFileAtomic(sub / "meta.json", meta.dump(2) + "\n");
    }
  }
}

std::vector<MultimodalSample> ReadSplit(const std::filesystem::path& dir,
                                        const std::string& split) {
  const auto root = dir / split;
  if (!std::filesystem::is_directory(root)) {
    throw IoError("missing dataset split directory " + root.string());
  }
  std::vector<std::filesystem::path> subjects;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory()) subjects.push_back(entry.path());
  }
  std::sort(subjects.begin(), subjects.end());
  std::vector<MultimodalSample> out;
  for (const auto& sub : subjects) {
    MultimodalSample s;
    std::size_t m = 0;
    try {
      const auto meta = nlohmann::json::parse(ReadFile(sub / "meta.json"));
      s.subject_id = meta.at("subject_id").get<std::uint64_t>();
      s.has_lesion = meta.at("lesion").get<bool>();
      m = meta.at("n_modalities").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError((sub / "meta.json").string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < m; ++i) {
      s.sources.push_back(ReadTensor(sub / ("source_" + std::to_string(i) + ".tnsr")));
    }
    s.target = ReadTensor(sub / "target.tnsr");
    s.enhancing_mask = ReadTensor(sub / "mask.tnsr");
    for (const Tensor& t : s.sources) RequireSameShape(t, s.target, "dataset sample");
    RequireSameShape(s.enhancing_mask, s.target, "dataset sample");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError("dataset split " + root.string() + " is empty");
  return out;
}

}  // namespace evfuse
