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

// Evaluation of a trained pipeline and export of its maps and reports.

#ifndef EVFUSE_EVAL_H_
#define EVFUSE_EVAL_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evfuse/calibration.h"
#include "evfuse/metrics.h"
#include "evfuse/net.h"
#include "evfuse/synth.h"
#include "evfuse/tensor.h"
#include "evfuse/training.h"

namespace evfuse {

struct SampleMetrics {
  std::uint64_t subject_id = 0;
  bool has_lesion = false;
  double psnr = 0.0;  // +inf for a perfect prediction
  double ssim = 0.0;
  double uce_aleatoric = 0.0;
  double uce_epistemic = 0.0;
  std::size_t mask_pixels = 0;
  std::size_t background_pixels = 0;
  double eu_mask_mean = 0.0;        // 0 when mask_pixels == 0
  double eu_background_mean = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one sample

  std::string Text() const;  // "mean ± std"
};

Aggregate Summarize(const std::vector<double>& values);

struct EvalReport {
  std::string mode;
  bool calibrated = false;
  std::size_t uce_bins = 10;
  std::vector<SampleMetrics> samples;
  Aggregate psnr, ssim, uce_aleatoric, uce_epistemic;
  // UCE over every pixel of every sample binned together.
  double pooled_uce_aleatoric = 0.0;
  double pooled_uce_epistemic = 0.0;
  // Pooled over lesion-bearing samples: mean EU inside the enhancing masks
  // divided by mean EU over every other pixel. 0 if no sample has a lesion.
  double eu_lesion_ratio = 0.0;
  std::vector<std::string> map_paths;  // relative to the export directory
  // Per-sample UCE bin tables, aleatoric then epistemic.
  std::vector<UceResult> uce_tables_aleatoric;
  std::vector<UceResult> uce_tables_epistemic;
};

struct EvalOptions {
  std::size_t uce_bins = 10;
  // Forward map from predicted to observed PIT frequency, as returned by
  // FitRecalibration. Calibrated quantiles use its inverse: the calibrated
  // forecaster's CDF is R(F(y)), so its quantile function is F^-1(R^-1(p)).
  std::optional<RecalibrationMap> recalibration;
  QuadratureConfig quadrature;
  // When set, per_sample.csv, uce_bins.csv, report.json and (with
  // export_maps) the PGM maps are written here.
  std::optional<std::filesystem::path> export_dir;
  bool export_maps = true;
  std::string mode = "combined";
};

// Scores precomputed predictions (one NIG map per sample, [1, 1, H, W])
// against the preprocessed targets.
EvalReport EvaluatePredictions(const std::vector<NigParamMap>& predictions,
                               const std::vector<PreparedSample>& prepared,
                               const std::vector<MultimodalSample>& samples,
                               const EvalOptions& options);

EvalReport Evaluate(const std::vector<EvidentialNet>& local_nets,
                    const EvidentialNet& fusion_net, FusionMode mode,
                    const std::vector<MultimodalSample>& samples,
                    const EvalOptions& options);

// PIT values of every pixel of every sample under the predictions.
std::vector<double> PipelinePitValues(const std::vector<NigParamMap>& predictions,
                                      const std::vector<PreparedSample>& prepared);

// Isotonic recalibration fitted on the predictions' PIT values.
RecalibrationMap FitRecalibration(const std::vector<NigParamMap>& predictions,
                                  const std::vector<PreparedSample>& prepared);

std::vector<NigParamMap> PredictAll(const std::vector<EvidentialNet>& local_nets,
                                    const EvidentialNet& fusion_net,
                                    FusionMode mode,
                                    const std::vector<PreparedSample>& prepared);

// Binary PGM (P5, maxval 65535, big-endian) min-max scaled, plus a JSON
// sidecar recording min, max and the image size so values can be recovered
// as min + (max - min) * v / 65535.
void WritePgm16(const std::filesystem::path& path, const Tensor& image);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> pixels;
};

PgmImage ReadPgm16(const std::filesystem::path& path);

void WritePerSampleCsv(const std::filesystem::path& path, const EvalReport& r);
std::vector<SampleMetrics> ReadPerSampleCsv(const std::filesystem::path& path);
std::string ReportJson(const EvalReport& r);

// subject_id,kind,bin,count,mean_uncertainty,mean_error with kind in
// {aleatoric, epistemic}.
void WriteUceBinsCsv(const std::filesystem::path& path, const EvalReport& r);

}  // namespace evfuse

#endif  // EVFUSE_EVAL_H_
