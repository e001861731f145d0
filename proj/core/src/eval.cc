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

#include "evfuse/eval.h"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evfuse/errors.h"
#include "evfuse/nig.h"
#include "evfuse/tensor_io.h"

namespace evfuse {

namespace {

using Json = nlohmann::ordered_json;

constexpr char kCsvHeader[] =
    "subject_id,has_lesion,psnr,ssim,uce_aleatoric,uce_epistemic,mask_pixels,"
    "background_pixels,eu_mask_mean,eu_background_mean";

// JSON has no infinity; non-finite values are written as strings.
Json Number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

Json AggregateJson(const Aggregate& a) {
  return Json{{"mean", Number(a.mean)}, {"std", Number(a.stddev)},
              {"text", a.Text()}};
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string Aggregate::Text() const {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.6g \xC2\xB1 %.6g", mean, stddev);
  return buf;
}

Aggregate Summarize(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1 && std::isfinite(a.mean)) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

std::vector<NigParamMap> PredictAll(const std::vector<EvidentialNet>& local_nets,
                                    const EvidentialNet& fusion_net,
                                    FusionMode mode,
                                    const std::vector<PreparedSample>& prepared) {
  std::vector<NigParamMap> out;
  out.reserve(prepared.size());
  for (const PreparedSample& s : prepared) {
    out.push_back(PredictPipeline(local_nets, fusion_net, mode, s).fused);
  }
  return out;
}

std::vector<double> PipelinePitValues(const std::vector<NigParamMap>& predictions,
                                      const std::vector<PreparedSample>& prepared) {
  if (predictions.size() != prepared.size()) {
    throw ShapeError("PipelinePitValues: one prediction per sample required");
  }
  std::vector<double> pit;
  for (std::size_t k = 0; k < prepared.size(); ++k) {
    const Tensor& y = prepared[k].target;
    RequireSameShape(predictions[k].gamma(), y, "PipelinePitValues");
    for (std::size_t j = 0; j < y.size(); ++j) {
      pit.push_back(Predictive(predictions[k].at(j)).Cdf(y[j]));
    }
  }
  return pit;
}

RecalibrationMap FitRecalibration(const std::vector<NigParamMap>& predictions,
                                  const std::vector<PreparedSample>& prepared) {
  return FitIsotonic(PipelinePitValues(predictions, prepared));
}

EvalReport EvaluatePredictions(const std::vector<NigParamMap>& predictions,
                               const std::vector<PreparedSample>& prepared,
                               const std::vector<MultimodalSample>& samples,
                               const EvalOptions& options) {
  if (predictions.size() != prepared.size() || prepared.size() != samples.size()) {
    throw ShapeError("EvaluatePredictions: predictions, prepared samples and "
                     "samples must align");
  }
  if (samples.empty()) throw ConstraintError("evaluate: no samples");
  EvalReport report;
  report.mode = options.mode;
  report.calibrated = options.recalibration.has_value();
  report.uce_bins = options.uce_bins;

  std::optional<RecalibrationMap> quantile_map;
  if (options.recalibration) quantile_map = options.recalibration->Inverse();

  double mask_sum = 0.0, bg_sum = 0.0;
  std::size_t mask_n = 0, bg_n = 0;
  std::vector<double> all_au, all_eu, all_sq;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const NigParamMap& pred = predictions[k];
    const Tensor& y = prepared[k].target;
    const Tensor& mask = prepared[k].mask;
    const Tensor& gamma = pred.gamma();
    RequireSameShape(gamma, y, "evaluate");

    SampleMetrics m;
    m.subject_id = samples[k].subject_id;
    m.has_lesion = samples[k].has_lesion;
    // A constant target has no range; fall back to unit range.
    const double range = y.Max() - y.Min();
    const double data_range = range > 0.0 ? range : 1.0;
    m.psnr = Psnr(gamma, y, data_range);
    m.ssim = Ssim(gamma, y, data_range);

    const UncertaintyMaps u =
        quantile_map
            ? CalibratedUncertaintyMaps(pred, *quantile_map, options.quadrature)
            : UncalibratedUncertaintyMaps(pred);
    Tensor sq_error(y.shape()), abs_error(y.shape());
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double r = gamma[j] - y[j];
      sq_error[j] = r * r;
      abs_error[j] = std::abs(r);
    }
    all_au.insert(all_au.end(), u.aleatoric.data().begin(), u.aleatoric.data().end());
    all_eu.insert(all_eu.end(), u.epistemic.data().begin(), u.epistemic.data().end());
    all_sq.insert(all_sq.end(), sq_error.data().begin(), sq_error.data().end());
    UceResult ua = Uce(u.aleatoric, sq_error, options.uce_bins);
    UceResult ue = Uce(u.epistemic, sq_error, options.uce_bins);
    m.uce_aleatoric = ua.value;
    m.uce_epistemic = ue.value;

    double s_mask = 0.0, s_bg = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (mask[j] > 0.5) {
        s_mask += u.epistemic[j];
        ++m.mask_pixels;
      } else {
        s_bg += u.epistemic[j];
        ++m.background_pixels;
      }
    }
    if (m.mask_pixels > 0) m.eu_mask_mean = s_mask / static_cast<double>(m.mask_pixels);
    if (m.background_pixels > 0) {
      m.eu_background_mean = s_bg / static_cast<double>(m.background_pixels);
    }
    if (m.has_lesion && m.mask_pixels > 0) {
      mask_sum += s_mask;
      mask_n += m.mask_pixels;
      bg_sum += s_bg;
      bg_n += m.background_pixels;
    }

    if (options.export_dir && options.export_maps) {
      const std::string stem = SubjectDirName(m.subject_id);
      const std::pair<const char*, const Tensor*> maps[] = {
          {"gamma", &gamma}, {"au", &u.aleatoric}, {"eu", &u.epistemic},
          {"error", &abs_error}};
      for (const auto& [name, t] : maps) {
        const std::string rel = "maps/" + stem + "_" + name + ".pgm";
        WritePgm16(*options.export_dir / rel, *t);
        report.map_paths.push_back(rel);
      }
    }
    report.samples.push_back(m);
    report.uce_tables_aleatoric.push_back(std::move(ua));
    report.uce_tables_epistemic.push_back(std::move(ue));
  }

  std::vector<double> psnr, ssim, uce_a, uce_e;
  for (const SampleMetrics& m : report.samples) {
    psnr.push_back(m.psnr);
    ssim.push_back(m.ssim);
    uce_a.push_back(m.uce_aleatoric);
    uce_e.push_back(m.uce_epistemic);
  }
  report.psnr = Summarize(psnr);
  report.ssim = Summarize(ssim);
  report.uce_aleatoric = Summarize(uce_a);
  report.uce_epistemic = Summarize(uce_e);
  const Shape pooled_shape = {all_sq.size()};
  const Tensor pooled_sq(pooled_shape, std::move(all_sq));
  report.pooled_uce_aleatoric =
      Uce(Tensor(pooled_shape, std::move(all_au)), pooled_sq, options.uce_bins).value;
  report.pooled_uce_epistemic =
      Uce(Tensor(pooled_shape, std::move(all_eu)), pooled_sq, options.uce_bins).value;
  if (mask_n > 0 && bg_n > 0 && bg_sum > 0.0) {
    report.eu_lesion_ratio = (mask_sum / static_cast<double>(mask_n)) /
                             (bg_sum / static_cast<double>(bg_n));
  }

  if (options.export_dir) {
    WritePerSampleCsv(*options.export_dir / "per_sample.csv", report);
    WriteUceBinsCsv(*options.export_dir / "uce_bins.csv", report);
    WriteFileAtomic(*options.export_dir / "report.json", ReportJson(report));
  }
  return report;
}

EvalReport Evaluate(const std::vector<EvidentialNet>& local_nets,
                    const EvidentialNet& fusion_net, FusionMode mode,
                    const std::vector<MultimodalSample>& samples,
                    const EvalOptions& options) {
  const std::vector<PreparedSample> prepared = PrepareAll(samples);
  EvalOptions opts = options;
  opts.mode = FusionModeName(mode);
  return EvaluatePredictions(PredictAll(local_nets, fusion_net, mode, prepared),
                             prepared, samples, opts);
}

void WritePgm16(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.size() < 2) throw ShapeError("WritePgm16: need an image");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h * w != image.size()) {
    throw ShapeError("WritePgm16: expected a single image, got " +
                     ShapeToString(s));
  }
  if (!image.AllFinite()) {
    throw NonFiniteError("WritePgm16: non-finite values in " + path.string());
  }
  const double lo = image.Min(), hi = image.Max();
  const double span = hi - lo;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) +
                    "\n65535\n";
  for (double v : image.values()) {
    const auto q = static_cast<std::uint16_t>(
        span > 0.0 ? std::lround((v - lo) / span * 65535.0) : 0);
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xFF));
  }
  WriteFileAtomic(path, out);
  Json side{{"min", lo}, {"max", hi}, {"width", w}, {"height", h},
            {"maxval", 65535}};
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  WriteFileAtomic(sidecar, side.dump(2) + "\n");
}

PgmImage ReadPgm16(const std::filesystem::path& path) {
  const std::string bytes = ReadFile(path);
  std::istringstream in(bytes);
  std::string magic;
  std::size_t maxval = 0;
  PgmImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 65535 || !in) {
    throw FormatError(path.string() + ": not a 16-bit binary PGM");
  }
  const std::size_t offset = static_cast<std::size_t>(in.tellg()) + 1;
  if (bytes.size() != offset + 2 * img.width * img.height) {
    throw FormatError(path.string() + ": truncated PGM payload");
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint16_t>(
        (static_cast<unsigned char>(bytes[offset + 2 * i]) << 8) |
        static_cast<unsigned char>(bytes[offset + 2 * i + 1]));
  }
  return img;
}

void WritePerSampleCsv(const std::filesystem::path& path, const EvalReport& r) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const SampleMetrics& m : r.samples) {
    out += std::to_string(m.subject_id) + "," + (m.has_lesion ? "1" : "0") + "," +
           FormatDouble(m.psnr) + "," + FormatDouble(m.ssim) + "," +
           FormatDouble(m.uce_aleatoric) + "," + FormatDouble(m.uce_epistemic) +
           "," + std::to_string(m.mask_pixels) + "," +
           std::to_string(m.background_pixels) + "," +
           FormatDouble(m.eu_mask_mean) + "," +
           FormatDouble(m.eu_background_mean) + "\n";
  }
  WriteFileAtomic(path, out);
}

std::vector<SampleMetrics> ReadPerSampleCsv(const std::filesystem::path& path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  std::getline(in, line);
  if (line != kCsvHeader) {
    throw FormatError(path.string() + ": unexpected per-sample header");
  }
  std::vector<SampleMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    SampleMetrics m;
    m.subject_id = std::stoull(f[0]);
    m.has_lesion = f[1] == "1";
    m.psnr = std::strtod(f[2].c_str(), nullptr);
    m.ssim = std::strtod(f[3].c_str(), nullptr);
    m.uce_aleatoric = std::strtod(f[4].c_str(), nullptr);
    m.uce_epistemic = std::strtod(f[5].c_str(), nullptr);
    m.mask_pixels = std::stoull(f[6]);
    m.background_pixels = std::stoull(f[7]);
    m.eu_mask_mean = std::strtod(f[8].c_str(), nullptr);
    m.eu_background_mean = std::strtod(f[9].c_str(), nullptr);
    rows.push_back(m);
  }
  return rows;
}

void WriteUceBinsCsv(const std::filesystem::path& path, const EvalReport& r) {
  std::string out = "subject_id,kind,bin,count,mean_uncertainty,mean_error\n";
  const std::pair<const char*, const std::vector<UceResult>*> kinds[] = {
      {"aleatoric", &r.uce_tables_aleatoric}, {"epistemic", &r.uce_tables_epistemic}};
  for (const auto& [kind, tables] : kinds) {
    for (std::size_t k = 0; k < tables->size(); ++k) {
      const auto& bins = (*tables)[k].bins;
      for (std::size_t b = 0; b < bins.size(); ++b) {
        out += std::to_string(r.samples[k].subject_id) + "," + kind + "," +
               std::to_string(b) + "," + std::to_string(bins[b].count) + "," +
               FormatDouble(bins[b].mean_uncertainty) + "," +
               FormatDouble(bins[b].mean_error) + "\n";
      }
    }
  }
  WriteFileAtomic(path, out);
}

std::string ReportJson(const EvalReport& r) {
  Json j;
  j["mode"] = r.mode;
  j["calibrated"] = r.calibrated;
  j["uce_bins"] = r.uce_bins;
  j["n_samples"] = r.samples.size();
  j["psnr"] = AggregateJson(r.psnr);
  j["ssim"] = AggregateJson(r.ssim);
  j["uce_aleatoric"] = AggregateJson(r.uce_aleatoric);
  j["uce_epistemic"] = AggregateJson(r.uce_epistemic);
  j["pooled_uce_aleatoric"] = Number(r.pooled_uce_aleatoric);
  j["pooled_uce_epistemic"] = Number(r.pooled_uce_epistemic);
  j["eu_lesion_ratio"] = Number(r.eu_lesion_ratio);
  Json rows = Json::array();
  for (const SampleMetrics& m : r.samples) {
    rows.push_back(Json{{"subject_id", m.subject_id},
                        {"has_lesion", m.has_lesion},
                        {"psnr", Number(m.psnr)},
                        {"ssim", Number(m.ssim)},
                        {"uce_aleatoric", Number(m.uce_aleatoric)},
                        {"uce_epistemic", Number(m.uce_epistemic)},
                        {"mask_pixels", m.mask_pixels},
                        {"background_pixels", m.background_pixels},
                        {"eu_mask_mean", Number(m.eu_mask_mean)},
                        {"eu_background_mean", Number(m.eu_background_mean)}});
  }
  j["samples"] = std::move(rows);
  j["maps"] = r.map_paths;
  return j.dump(2) + "\n";
}

}  // namespace evfuse
