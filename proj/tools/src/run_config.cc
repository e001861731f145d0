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

#include "evfuse_cli/run_config.h"

#include <algorithm>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "evfuse/calibration.h"
#include "evfuse/errors.h"

namespace evfuse::cli {

namespace {

using Json = nlohmann::json;

std::size_t LineAt(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

// Line of `"key"` inside `"section"`; best effort, used only for messages.
std::optional<std::size_t> LineOf(const std::string& text,
                                  const std::string& section,
                                  const std::string& key = "") {
  std::size_t from = 0;
  if (!section.empty()) {
    from = text.find("\"" + section + "\"");
    if (from == std::string::npos) return std::nullopt;
    if (key.empty()) return LineAt(text, from);
  }
  const std::size_t at = text.find("\"" + key + "\"", from);
  if (at == std::string::npos) return std::nullopt;
  return LineAt(text, at);
}

class SectionReader {
 public:
  SectionReader(const std::string& text, const Json& root, std::string section)
      : text_(text), section_(std::move(section)) {
    const auto it = root.find(section_);
    if (it == root.end()) return;
    if (!it->is_object()) Fail("", "section must be an object");
    obj_ = &*it;
  }

  void Count(const char* key, std::size_t& out) {
    std::uint64_t v = out;
    Unsigned(key, v);
    out = static_cast<std::size_t>(v);
  }
  void Unsigned(const char* key, std::uint64_t& out) {
    if (const Json* v = Take(key)) {
      if (!v->is_number_unsigned()) Fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void Real(const char* key, double& out) {
    if (const Json* v = Take(key)) {
      if (!v->is_number()) Fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void Bool(const char* key, bool& out) {
    if (const Json* v = Take(key)) {
      if (!v->is_boolean()) Fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }

  // Rejects keys nobody asked for.
  void Finish() {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.contains(key)) Fail(key, "unknown key");
    }
  }

  [[noreturn]] void Fail(const std::string& key, const std::string& what) const {
    const std::string name = key.empty() ? section_ : section_ + "." + key;
    throw ConfigError(name + ": " + what, LineOf(text_, section_, key));
  }

 private:
  const Json* Take(const char* key) {
    seen_[key] = true;
    if (!obj_) return nullptr;
    const auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  const std::string& text_;
  std::string section_;
  const Json* obj_ = nullptr;
  std::map<std::string, bool> seen_;
};

}  // namespace

RunConfig RunConfig::Defaults() {
  RunConfig c;
  c.data.n_subjects = 80;
  c.data.image_size = 32;
  c.data.n_modalities = 3;
  c.net.levels = 3;
  c.net.base_channels = 8;
  c.train.iters_stage1 = 1500;
  c.train.iters_stage2 = 800;
  c.train.batch = 4;
  return c;
}

void RunConfig::Validate() const {
  data.Validate();
  net.Validate();
  train.Validate();
  QuadratureConfig q(calib.n_nodes);
  if (eval.uce_bins < 1) throw ConstraintError("eval.uce_bins must be >= 1");
  const std::size_t factor = std::size_t{1} << (net.levels - 1);
  if (data.image_size % factor != 0) {
    throw ConstraintError("data.image_size (" + std::to_string(data.image_size) +
                          ") must be divisible by 2^(net.levels - 1) = " +
                          std::to_string(factor));
  }
  if (net.input_channels != 1) {
    throw ConstraintError("net.input_channels must be 1");
  }
}

RunConfig ParseRunConfig(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(),
                      LineAt(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!root.is_object()) throw ConfigError("top level must be an object", 1);
  static const char* kSections[] = {"data", "net", "train", "calib", "eval"};
  for (const auto& [key, value] : root.items()) {
    if (std::find_if(std::begin(kSections), std::end(kSections),
                     [&](const char* s) { return key == s; }) == std::end(kSections)) {
      throw ConfigError("unknown section '" + key + "'", LineOf(text, "", key));
    }
  }

  RunConfig c = RunConfig::Defaults();
  SectionReader data(text, root, "data");
  data.Count("n_subjects", c.data.n_subjects);
  data.Count("image_size", c.data.image_size);
  data.Count("n_modalities", c.data.n_modalities);
  data.Real("lesion_rate", c.data.lesion_rate);
  data.Real("noise_sigma", c.data.noise_sigma);
  data.Unsigned("seed", c.data.seed);
  data.Finish();

  SectionReader net(text, root, "net");
  net.Count("levels", c.net.levels);
  net.Count("base_channels", c.net.base_channels);
  net.Unsigned("seed", c.net.seed);
  net.Finish();

  SectionReader train(text, root, "train");
  train.Real("lr_stage1", c.train.lr_stage1);
  train.Real("lr_stage2", c.train.lr_stage2);
  train.Unsigned("iters_stage1", c.train.iters_stage1);
  train.Unsigned("iters_stage2", c.train.iters_stage2);
  train.Real("lambda_pix", c.train.lambda_pix);
  train.Real("lambda_nig", c.train.lambda_nig);
  train.Real("lambda_r_max", c.train.lambda_r_max);
  train.Count("batch", c.train.batch);
  train.Unsigned("seed", c.train.seed);
  train.Unsigned("restart_period", c.train.restart_period);
  train.Real("restart_mult", c.train.restart_mult);
  train.Finish();

  SectionReader calib(text, root, "calib");
  calib.Count("n_nodes", c.calib.n_nodes);
  calib.Bool("calibrate_locals", c.calib.calibrate_locals);
  calib.Bool("exact_tails", c.calib.exact_tails);
  calib.Finish();

  SectionReader eval(text, root, "eval");
  eval.Count("uce_bins", c.eval.uce_bins);
  eval.Bool("export_maps", c.eval.export_maps);
  eval.Finish();

  try {
    c.Validate();
  } catch (const ConstraintError& e) {
    const std::string msg = e.what();
    std::string section;
    for (const char* s : kSections) {
      if (msg.rfind(s, 0) == 0) section = s;
    }
    if (msg.rfind("NetConfig", 0) == 0) section = "net";
    if (msg.rfind("QuadratureConfig", 0) == 0) section = "calib";
    throw ConfigError(msg, section.empty() ? std::nullopt : LineOf(text, section));
  }
  return c;
}

std::string ResolvedJson(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["data"] = {{"n_subjects", c.data.n_subjects},
               {"image_size", c.data.image_size},
               {"n_modalities", c.data.n_modalities},
               {"lesion_rate", c.data.lesion_rate},
               {"noise_sigma", c.data.noise_sigma},
               {"seed", c.data.seed}};
  j["net"] = {{"levels", c.net.levels},
              {"base_channels", c.net.base_channels},
              {"seed", c.net.seed}};
  j["train"] = {{"lr_stage1", c.train.lr_stage1},
                {"lr_stage2", c.train.lr_stage2},
                {"iters_stage1", c.train.iters_stage1},
                {"iters_stage2", c.train.iters_stage2},
                {"lambda_pix", c.train.lambda_pix},
                {"lambda_nig", c.train.lambda_nig},
                {"lambda_r_max", c.train.lambda_r_max},
                {"batch", c.train.batch},
                {"seed", c.train.seed},
                {"restart_period", c.train.restart_period},
                {"restart_mult", c.train.restart_mult}};
  j["calib"] = {{"n_nodes", c.calib.n_nodes},
                {"calibrate_locals", c.calib.calibrate_locals},
                {"exact_tails", c.calib.exact_tails}};
  j["eval"] = {{"uce_bins", c.eval.uce_bins},
               {"export_maps", c.eval.export_maps}};
  return j.dump(2) + "\n";
}

}  // namespace evfuse::cli
