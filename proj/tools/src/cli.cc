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

#include "evfuse_cli/cli.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evfuse/calibration.h"
#include "evfuse/errors.h"
#include "evfuse/eval.h"
#include "evfuse/net.h"
#include "evfuse/parallel.h"
#include "evfuse/synth.h"
#include "evfuse/tensor_io.h"
#include "evfuse/training.h"
#include "evfuse_cli/run_config.h"

namespace evfuse::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

struct CommandFlags {
  std::string mode = "combined";
  std::string split = "test";
  bool no_calibration = false;
  bool locals = false;
};

// Builds a directory next to its final location and swaps it in on Commit.
// Without a commit the staging copy is discarded and the old one survives.
class StagedDir {
 public:
  explicit StagedDir(fs::path final_path) : final_(std::move(final_path)) {
    staging_ = final_.parent_path() / (".staging-" + final_.filename().string());
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }

  const fs::path& path() const { return staging_; }

  void Commit() {
    fs::remove_all(final_);
    fs::rename(staging_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path staging_;
  bool committed_ = false;
};

RunConfig LoadConfig(const CommonFlags& flags) {
  RunConfig config = RunConfig::Defaults();
  if (!flags.config.empty()) {
    std::string text;
    try {
      text = ReadFile(flags.config);
    } catch (const IoError& e) {
      throw ConfigError(e.what(), std::nullopt);
    }
    config = ParseRunConfig(text);
  }
  if (flags.seed) {
    config.data.seed = *flags.seed;
    config.net.seed = *flags.seed;
    config.train.seed = *flags.seed;
  }
  return config;
}

void WriteStamp(const fs::path& out, const RunConfig& config) {
  WriteFileAtomic(out / "resolved-config.json", ResolvedJson(config));
  WriteFileAtomic(out / "VERSION", std::string("evfuse ") + kVersion + "\n");
}

EvidentialNet LoadNet(const fs::path& path) {
  if (!fs::exists(path)) {
    throw IoError("missing checkpoint: " + path.string() +
                  " (run the training command first)");
  }
  return LoadCheckpoint(path);
}

std::string LocalName(std::size_t m) { return "local_" + std::to_string(m); }

std::vector<EvidentialNet> LoadStage1(const fs::path& out, std::size_t n) {
  std::vector<EvidentialNet> nets;
  for (std::size_t m = 0; m < n; ++m) {
    nets.push_back(LoadNet(out / "models" / "stage1" / (LocalName(m) + ".evnt")));
  }
  return nets;
}

// A fusion mode, or one stage-I net as "local-<m>".
struct Predictor {
  std::string name;
  std::vector<EvidentialNet> locals;
  std::optional<EvidentialNet> fusion;
  FusionMode mode = FusionMode::kCombined;
  std::optional<std::size_t> single;

  PipelinePrediction Predict(const PreparedSample& s) const {
    if (single) {
      NigParamMap nig = ForwardLocal(locals[0], s.sources.at(*single)).nig;
      return {nig, {nig}};
    }
    return PredictPipeline(locals, *fusion, mode, s);
  }
};

std::optional<std::size_t> SingleLocalIndex(const std::string& name) {
  const std::string prefix = "local-";
  if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) return std::nullopt;
  const std::string rest = name.substr(prefix.size());
  if (rest.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  return std::stoul(rest);
}

void CheckPredictorName(const std::string& name, std::size_t n_modalities) {
  if (const auto m = SingleLocalIndex(name)) {
    if (*m >= n_modalities) {
      throw UsageError("--mode " + name + ": only " +
                       std::to_string(n_modalities) + " modalities");
    }
    return;
  }
  try {
    ParseFusionMode(name);
  } catch (const ConstraintError& e) {
    throw UsageError(std::string(e.what()) + " or local-<m>");
  }
}

Predictor LoadPredictor(const fs::path& out, const std::string& name,
                        std::size_t n_modalities) {
  CheckPredictorName(name, n_modalities);
  Predictor p;
  p.name = name;
  if (const auto m = SingleLocalIndex(name)) {
    p.single = *m;
    p.locals.push_back(LoadNet(out / "models" / "stage1" / (LocalName(*m) + ".evnt")));
    return p;
  }
  p.mode = ParseFusionMode(name);
  const fs::path dir = out / "models" / name;
  for (std::size_t m = 0; m < n_modalities; ++m) {
    p.locals.push_back(LoadNet(dir / (LocalName(m) + ".evnt")));
  }
  p.fusion = LoadNet(dir / "fusion.evnt");
  return p;
}

std::string EvalTag(const CommandFlags& f) {
  std::string tag = f.mode;
  if (f.split != "test") tag += "-" + f.split;
  if (f.no_calibration) tag += "-uncalibrated";
  return tag;
}

std::optional<RecalibrationMap> LoadCalibration(const fs::path& out,
                                                const CommandFlags& f,
                                                const std::string& file) {
  if (f.no_calibration) return std::nullopt;
  const fs::path path = out / "calibration" / f.mode / file;
  if (!fs::exists(path)) {
    throw IoError("missing calibration: " + path.string() +
                  " (run calibrate, or pass --no-calibration)");
  }
  return RecalibrationMap::ReadCsv(path);
}

std::size_t Modalities(const fs::path& out) {
  return ReadSplit(out / "data", "train").at(0).sources.size();
}

int GenData(const fs::path& out, const RunConfig& config, std::ostream& log) {
  const DatasetSplits data = GenerateDataset(config.data);
  StagedDir dir(out / "data");
  WriteDataset(dir.path(), data, config.data);
  dir.Commit();
  log << "gen-data: " << data.train.size() << " train, " << data.val.size()
      << " val, " << data.test.size() << " test subjects\n";
  return 0;
}

int TrainLocal(const fs::path& out, const RunConfig& config, std::ostream& log) {
  const std::vector<PreparedSample> train = PrepareAll(ReadSplit(out / "data", "train"));
  const std::size_t n = train.at(0).sources.size();
  std::vector<Stage1Result> results;
  for (std::size_t m = 0; m < n; ++m) {
    results.push_back(TrainStage1(train, m, config.net, config.train));
    const TrainLog& l = results.back().log;
    log << "train-local: modality " << m << " loss "
        << (l.empty() ? 0.0 : l.front().loss_total) << " -> "
        << (l.empty() ? 0.0 : l.back().loss_total) << "\n";
  }
  StagedDir models(out / "models" / "stage1");
  StagedDir logs(out / "logs" / "stage1");
  for (std::size_t m = 0; m < n; ++m) {
    SaveCheckpoint(models.path() / (LocalName(m) + ".evnt"), results[m].net);
    WriteLogCsv(logs.path() / (LocalName(m) + ".csv"), results[m].log);
  }
  models.Commit();
  logs.Commit();
  return 0;
}

int TrainFusion(const fs::path& out, const RunConfig& config,
                const CommandFlags& f, std::ostream& log) {
  const FusionMode mode = ParseFusionMode(f.mode);
  const std::vector<PreparedSample> train = PrepareAll(ReadSplit(out / "data", "train"));
  const std::vector<EvidentialNet> locals =
      LoadStage1(out, train.at(0).sources.size());
  const Stage2Result r = TrainStage2(locals, train, mode, config.train);
  if (!r.log.empty()) {
    log << "train-fusion (" << f.mode << "): loss " << r.log.front().loss_total
        << " -> " << r.log.back().loss_total << "\n";
  }
  StagedDir models(out / "models" / f.mode);
  StagedDir logs(out / "logs" / f.mode);
  for (std::size_t m = 0; m < r.local_nets.size(); ++m) {
    SaveCheckpoint(models.path() / (LocalName(m) + ".evnt"), r.local_nets[m]);
  }
  SaveCheckpoint(models.path() / "fusion.evnt", r.fusion_net);
  WriteLogCsv(logs.path() / "stage2.csv", r.log);
  models.Commit();
  logs.Commit();
  return 0;
}

int Calibrate(const fs::path& out, const RunConfig& config,
              const CommandFlags& f, std::ostream& log) {
  const std::vector<MultimodalSample> val = ReadSplit(out / "data", "val");
  const std::vector<PreparedSample> prepared = PrepareAll(val);
  const Predictor p = LoadPredictor(out, f.mode, prepared.at(0).sources.size());
  std::vector<NigParamMap> fused;
  std::vector<std::vector<NigParamMap>> locals;
  for (const PreparedSample& s : prepared) {
    PipelinePrediction pred = p.Predict(s);
    fused.push_back(std::move(pred.fused));
    locals.push_back(std::move(pred.locals));
  }
  const RecalibrationMap r = FitRecalibration(fused, prepared);
  StagedDir dir(out / "calibration" / f.mode);
  r.WriteCsv(dir.path() / "recalibration.csv");
  const bool with_locals = (f.locals || config.calib.calibrate_locals) && !p.single;
  if (with_locals) {
    for (std::size_t m = 0; m < p.locals.size(); ++m) {
      std::vector<NigParamMap> lm;
      for (const auto& l : locals) lm.push_back(l[m]);
      FitRecalibration(lm, prepared).WriteCsv(dir.path() / (LocalName(m) + ".csv"));
    }
  }
  dir.Commit();
  log << "calibrate (" << f.mode << "): " << r.knots().size()
      << " knots from " << val.size() << " validation subjects"
      << (with_locals ? " (+ local maps)" : "") << "\n";
  return 0;
}

UncertaintyMaps Uncertainties(const NigParamMap& m,
                              const std::optional<RecalibrationMap>& r,
                              const QuadratureConfig& q) {
  if (!r) return UncalibratedUncertaintyMaps(m);
  return CalibratedUncertaintyMaps(m, r->Inverse(), q);
}

int Predict(const fs::path& out, const RunConfig& config, const CommandFlags& f,
            std::ostream& log) {
  const std::vector<MultimodalSample> samples = ReadSplit(out / "data", f.split);
  const std::vector<PreparedSample> prepared = PrepareAll(samples);
  const Predictor p = LoadPredictor(out, f.mode, prepared.at(0).sources.size());
  const std::optional<RecalibrationMap> r =
      LoadCalibration(out, f, "recalibration.csv");
  std::vector<std::optional<RecalibrationMap>> local_r(p.locals.size());
  if (!p.single && !f.no_calibration) {
    for (std::size_t m = 0; m < p.locals.size(); ++m) {
      const fs::path path = out / "calibration" / f.mode / (LocalName(m) + ".csv");
      if (fs::exists(path)) local_r[m] = RecalibrationMap::ReadCsv(path);
    }
  }
  const QuadratureConfig q = config.calib.Quadrature();
  StagedDir dir(out / "predictions" / f.mode / f.split);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const PipelinePrediction pred = p.Predict(prepared[k]);
    const fs::path sub = dir.path() / SubjectDirName(samples[k].subject_id);
    WriteTensor(sub / "gamma.tnsr", pred.fused.gamma());
    WriteTensor(sub / "eta.tnsr", pred.fused.eta());
    WriteTensor(sub / "alpha.tnsr", pred.fused.alpha());
    WriteTensor(sub / "beta.tnsr", pred.fused.beta());
    const UncertaintyMaps u = Uncertainties(pred.fused, r, q);
    WriteTensor(sub / "aleatoric.tnsr", u.aleatoric);
    WriteTensor(sub / "epistemic.tnsr", u.epistemic);
    if (!p.single) {
      for (std::size_t m = 0; m < pred.locals.size(); ++m) {
        const std::string stem = LocalName(m) + "_";
        const UncertaintyMaps lu = Uncertainties(pred.locals[m], local_r[m], q);
        WriteTensor(sub / (stem + "gamma.tnsr"), pred.locals[m].gamma());
        WriteTensor(sub / (stem + "aleatoric.tnsr"), lu.aleatoric);
        WriteTensor(sub / (stem + "epistemic.tnsr"), lu.epistemic);
      }
    }
  }
  dir.Commit();
  log << "predict (" << f.mode << ", " << f.split << "): " << samples.size()
      << " subjects" << (r ? ", calibrated" : "") << "\n";
  return 0;
}

int EvaluateCommand(const fs::path& out, const RunConfig& config,
                    const CommandFlags& f, std::ostream& log) {
  const std::vector<MultimodalSample> samples = ReadSplit(out / "data", f.split);
  const std::vector<PreparedSample> prepared = PrepareAll(samples);
  const Predictor p = LoadPredictor(out, f.mode, prepared.at(0).sources.size());
  EvalOptions opts;
  opts.uce_bins = config.eval.uce_bins;
  opts.recalibration = LoadCalibration(out, f, "recalibration.csv");
  opts.quadrature = config.calib.Quadrature();
  opts.mode = f.mode;
  opts.export_maps = config.eval.export_maps;
  std::vector<NigParamMap> preds;
  for (const PreparedSample& s : prepared) preds.push_back(p.Predict(s).fused);

  const std::string tag = EvalTag(f);
  StagedDir dir(out / "eval" / tag);
  opts.export_dir = dir.path();
  const EvalReport r = EvaluatePredictions(preds, prepared, samples, opts);
  dir.Commit();
  log << "evaluate (" << tag << "): PSNR " << r.psnr.Text() << " dB, SSIM "
      << r.ssim.Text() << ", UCE_AU " << r.uce_aleatoric.Text() << ", UCE_EU "
      << r.uce_epistemic.Text() << ", EU lesion ratio " << r.eu_lesion_ratio
      << "\n";
  return 0;
}

void CopyPgm(const fs::path& from, const fs::path& to) {
  if (!fs::exists(from)) {
    throw IoError("missing evaluation map " + from.string() +
                  " (evaluate with eval.export_maps = true)");
  }
  WriteFileAtomic(to, ReadFile(from));
  fs::path from_side = from, to_side = to;
  from_side += ".json";
  to_side += ".json";
  WriteFileAtomic(to_side, ReadFile(from_side));
}

int Report(const fs::path& out, const CommandFlags& f, std::ostream& log) {
  const std::string tag = EvalTag(f);
  const fs::path eval_dir = out / "eval" / tag;
  for (const char* name : {"report.json", "per_sample.csv", "uce_bins.csv"}) {
    if (!fs::exists(eval_dir / name)) {
      throw IoError("missing evaluation artifact " + (eval_dir / name).string() +
                    " (run evaluate first)");
    }
  }
  StagedDir dir(out / "report" / tag);
  const fs::path root = dir.path();

  std::size_t curves = 0;
  const fs::path stage1 = out / "logs" / "stage1";
  if (fs::is_directory(stage1)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(stage1)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      WriteLogCsv(root / "loss_curves" / ("stage1_" + file.filename().string()),
                  ReadLogCsv(file));
      ++curves;
    }
  }
  if (!SingleLocalIndex(f.mode)) {
    const fs::path stage2 = out / "logs" / f.mode / "stage2.csv";
    if (fs::exists(stage2)) {
      WriteLogCsv(root / "loss_curves" / ("stage2_" + f.mode + ".csv"),
                  ReadLogCsv(stage2));
      ++curves;
    }
  }

  const fs::path calib = out / "calibration" / f.mode / "recalibration.csv";
  const RecalibrationMap r = !f.no_calibration && fs::exists(calib)
                                 ? RecalibrationMap::ReadCsv(calib)
                                 : RecalibrationMap::Identity();
  std::string curve = "p_in,p_out\n";
  char buf[64];
  for (int i = 0; i <= 100; ++i) {
    const double p = i / 100.0;
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p, r(p));
    curve += buf;
  }
  WriteFileAtomic(root / "calibration_curve.csv", curve);

  std::istringstream bins(ReadFile(eval_dir / "uce_bins.csv"));
  std::string header, line, aleatoric, epistemic;
  std::getline(bins, header);
  const std::string bin_header = "subject_id,bin,count,mean_uncertainty,mean_error\n";
  aleatoric = epistemic = bin_header;
  while (std::getline(bins, line)) {
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) continue;
    const std::string kind = line.substr(c1 + 1, c2 - c1 - 1);
    const std::string row = line.substr(0, c1) + line.substr(c2) + "\n";
    (kind == "aleatoric" ? aleatoric : epistemic) += row;
  }
  WriteFileAtomic(root / "uce_bins_aleatoric.csv", aleatoric);
  WriteFileAtomic(root / "uce_bins_epistemic.csv", epistemic);
  WriteFileAtomic(root / "per_sample.csv", ReadFile(eval_dir / "per_sample.csv"));

  const std::vector<SampleMetrics> rows = ReadPerSampleCsv(eval_dir / "per_sample.csv");
  const std::vector<MultimodalSample> samples = ReadSplit(out / "data", f.split);
  std::size_t panels = 0;
  for (const SampleMetrics& row : rows) {
    const auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& s) {
      return s.subject_id == row.subject_id;
    });
    if (it == samples.end()) {
      throw IoError("subject " + std::to_string(row.subject_id) +
                    " missing from data/" + f.split);
    }
    const std::string stem = SubjectDirName(row.subject_id);
    const std::size_t source = SingleLocalIndex(f.mode).value_or(0);
    WritePgm16(root / "panels" / (stem + "_source.pgm"), Preprocess(it->sources.at(source)));
    WritePgm16(root / "panels" / (stem + "_target.pgm"), Preprocess(it->target));
    for (const char* map : {"gamma", "error", "au", "eu"}) {
      CopyPgm(eval_dir / "maps" / (stem + "_" + map + ".pgm"),
              root / "panels" / (stem + "_" + map + ".pgm"));
    }
    panels += 6;
  }
  dir.Commit();
  log << "report (" << tag << "): " << curves << " loss curves, " << panels
      << " panels\n";
  return 0;
}

void ApplyThreads(const CommonFlags& flags) {
  std::size_t n = 1;
  if (flags.threads) {
    n = *flags.threads;
  } else if (const char* env = std::getenv("EVFUSE_THREADS")) {
    n = std::strtoul(env, nullptr, 10);
  }
  SetThreadCount(n == 0 ? 1 : n);
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"evfuse: evidential multimodal image translation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("evfuse ") + kVersion);
  CommonFlags common;
  CommandFlags cmd;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "run directory")->required();
    sub->add_option("--seed", common.seed, "overrides data, net and train seeds");
    sub->add_option("--threads", common.threads, "worker cap (default 1)");
  };
  auto add_mode = [&](CLI::App* sub, const std::string& help) {
    sub->add_option("--mode", cmd.mode, help)->capture_default_str();
  };
  auto add_split = [&](CLI::App* sub) {
    sub->add_option("--split", cmd.split, "dataset split")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  CLI::App* local = app.add_subcommand("train-local", "stage I: one net per source");
  CLI::App* fusion = app.add_subcommand("train-fusion", "stage II: fusion training");
  CLI::App* calib = app.add_subcommand("calibrate", "fit the recalibration map");
  CLI::App* pred = app.add_subcommand("predict", "write prediction tensors");
  CLI::App* eval = app.add_subcommand("evaluate", "score a predictor");
  CLI::App* report = app.add_subcommand("report", "export plot-ready data");
  for (CLI::App* sub : {gen, local, fusion, calib, pred, eval, report}) add_common(sub);
  fusion->add_option("--mode", cmd.mode, "local-only, global-only or combined")
      ->check(CLI::IsMember({"local-only", "global-only", "combined"}))
      ->capture_default_str();
  const std::string predictor_help =
      "combined, local-only, global-only or local-<m>";
  add_mode(calib, predictor_help);
  calib->add_flag("--locals", cmd.locals, "also calibrate each local predictive");
  for (CLI::App* sub : {pred, eval, report}) {
    add_mode(sub, predictor_help);
    add_split(sub);
    sub->add_flag("--no-calibration", cmd.no_calibration, "use raw uncertainties");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "evfuse " << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "evfuse: " << e.what() << "\n";
    return 2;
  }

  try {
    const RunConfig config = LoadConfig(common);
    ApplyThreads(common);
    const fs::path dir = common.out;
    fs::create_directories(dir);
    WriteStamp(dir, config);
    if (!gen->parsed() && (calib->parsed() || pred->parsed() || eval->parsed() ||
                           report->parsed())) {
      CheckPredictorName(cmd.mode, fs::exists(dir / "data" / "train")
                                       ? Modalities(dir)
                                       : config.data.n_modalities);
    }
    if (gen->parsed()) return GenData(dir, config, out);
    if (local->parsed()) return TrainLocal(dir, config, out);
    if (fusion->parsed()) return TrainFusion(dir, config, cmd, out);
    if (calib->parsed()) return Calibrate(dir, config, cmd, out);
    if (pred->parsed()) return Predict(dir, config, cmd, out);
    if (eval->parsed()) return EvaluateCommand(dir, config, cmd, out);
    if (report->parsed()) return Report(dir, cmd, out);
  } catch (const ConfigError& e) {
    err << "evfuse: config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "evfuse: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "evfuse: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace evfuse::cli
