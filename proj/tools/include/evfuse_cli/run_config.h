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

// Run configuration for the command-line pipeline.
//
// A JSON document with optional sections {data, net, train, calib, eval}.
// Every field is optional; unknown keys and wrongly typed values are
// rejected with the line they appear on. The defaults form a desk profile
// sized so the whole pipeline runs in a few minutes on one core.

#ifndef EVFUSE_CLI_RUN_CONFIG_H_
#define EVFUSE_CLI_RUN_CONFIG_H_

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include "evfuse/calibration.h"
#include "evfuse/net.h"
#include "evfuse/synth.h"
#include "evfuse/training.h"

namespace evfuse::cli {

struct CalibSection {
  std::size_t n_nodes = 199;
  bool calibrate_locals = false;
  // Closed-form end cells; false selects the plain midpoint rule.
  bool exact_tails = true;

  QuadratureConfig Quadrature() const {
    return QuadratureConfig(n_nodes, exact_tails ? QuadratureRule::kExactTails
                                                 : QuadratureRule::kMidpoint);
  }
};

struct EvalSection {
  std::size_t uce_bins = 10;
  bool export_maps = true;
};

struct RunConfig {
  SynthConfig data;
  NetConfig net;
  TrainConfig train;
  CalibSection calib;
  EvalSection eval;

  // The desk profile every absent field falls back to.
  static RunConfig Defaults();
  void Validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::optional<std::size_t> line)
      : std::runtime_error(line ? "line " + std::to_string(*line) + ": " + message
                                : message),
        line_(line) {}
  std::optional<std::size_t> line() const { return line_; }

 private:
  std::optional<std::size_t> line_;
};

RunConfig ParseRunConfig(const std::string& text);
// Pretty-printed, fully resolved JSON (every field present).
std::string ResolvedJson(const RunConfig& config);

}  // namespace evfuse::cli

#endif  // EVFUSE_CLI_RUN_CONFIG_H_
