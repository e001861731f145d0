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

// The `evfuse` command line.
//
//   evfuse <command> --out DIR [--config FILE] [--seed N] [--threads N] ...
//
// Commands: gen-data, train-local, train-fusion, calibrate, predict,
// evaluate, report. Exit codes: 0 success, 1 runtime failure, 2 usage or
// config error. Every command writes DIR/resolved-config.json and
// DIR/VERSION, and only ever writes under DIR. Results are computed in full
// before anything is written, and directories are replaced atomically, so a
// failing command leaves earlier outputs untouched.
//
// Run-directory layout:
//   data/{train,val,test}/subject_NNNN/   dataset
//   models/stage1/local_<m>.evnt           stage-I nets
//   models/<mode>/{local_<m>,fusion}.evnt  stage-II models
//   logs/stage1/local_<m>.csv, logs/<mode>/stage2.csv
//   calibration/<predictor>/recalibration.csv
//   predictions/<predictor>/<split>/subject_NNNN/*.tnsr
//   eval/<tag>/{report.json,per_sample.csv,uce_bins.csv,maps/}
//   report/<tag>/{loss_curves/,calibration_curve.csv,uce_bins_*.csv,
//                 per_sample.csv,panels/}
//
// A predictor is a fusion mode (combined, local-only, global-only) or a
// single stage-I net (local-<m>). An evaluation tag is the predictor name,
// suffixed with -val for the validation split and -uncalibrated when
// calibration is off.

#ifndef EVFUSE_CLI_CLI_H_
#define EVFUSE_CLI_CLI_H_

#include <ostream>
#include <string>
#include <vector>

namespace evfuse::cli {

inline constexpr char kVersion[] = "0.1.0";

// args excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace evfuse::cli

#endif  // EVFUSE_CLI_CLI_H_
