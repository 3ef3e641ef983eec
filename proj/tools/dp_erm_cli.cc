// Copyright 2024 Google LLC
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// dp-erm: run, sweep, sample-test, lowerbound, accept.
//
// Experiment flags mirror the keys of the --config file; a flag given on
// the command line overrides the file.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/strings/str_cat.h"
#include "dp_erm/acceptance.h"
#include "dp_erm/harness.h"

namespace {

using ::dp_erm::ExperimentConfig;

// Experiment keys exposed as --<key> (underscores become dashes).
const char* const kExperimentKeys[] = {
    "mechanism", "instance", "loss",    "body",  "csv",       "csv_labels",
    "n",         "p",        "eps",     "delta", "h",         "trials",
    "seed",      "mode",     "steps",   "cells", "c_mix",     "rate",
    "inner",     "noise",    "delta_reg", "boosted", "rho",   "timing",
    "threads",   "out",      "svg",
};

std::string FlagName(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

struct ExperimentFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
};

void AddExperimentFlags(CLI::App* app, ExperimentFlags* flags) {
  app->add_option("--config", flags->config_path,
                  "Key-value file; flags override its entries")
      ->check(CLI::ExistingFile);
  for (const char* key : kExperimentKeys) {
    app->add_option(FlagName(key), flags->values[key],
                    absl::StrCat("Sets '", key, "' (lists: a,b,c)"));
  }
}

absl::Status BuildConfig(CLI::App* app, const ExperimentFlags& flags,
                         ExperimentConfig* config) {
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    auto values = dp_erm::ParseKeyValues(in);
    if (!values.ok()) return values.status();
    DP_ERM_RETURN_IF_ERROR(dp_erm::ApplyKeyValues(*values, config));
  }
  for (const char* key : kExperimentKeys) {
    if (app->count(FlagName(key)) == 0) continue;
    DP_ERM_RETURN_IF_ERROR(
        dp_erm::ApplyKeyValue(key, flags.values.at(key), config));
  }
  return dp_erm::ValidateConfig(*config);
}

int Fail(const absl::Status& status) {
  std::cerr << "error: " << status << '\n';
  return 2;
}

// Writes to config.out, or stdout when it is empty.
absl::Status Emit(const ExperimentConfig& config, const std::string& text) {
  if (config.out.empty()) {
    std::cout << text;
    return absl::OkStatus();
  }
  std::ofstream out(config.out);
  out << text;
  if (!out) {
    return dp_erm::MakeError(dp_erm::ErrorKind::kInvalidArgument,
                             absl::StrCat("cannot write ", config.out));
  }
  return absl::OkStatus();
}

int RunSweep(const ExperimentConfig& config, bool single) {
  if (single && dp_erm::ExpandGrid(config).size() != 1) {
    return Fail(dp_erm::MakeError(
        dp_erm::ErrorKind::kInvalidArgument,
        "run takes one value per grid key; use sweep for grids"));
  }
  auto result = dp_erm::RunExperiment(config);
  if (!result.ok()) return Fail(result.status());
  std::ostringstream csv;
  dp_erm::WriteExperimentCsv(*result, config.record_timing, csv);
  absl::Status status = Emit(config, csv.str());
  if (!status.ok()) return Fail(status);
  if (!config.svg.empty()) {
    std::ofstream svg(config.svg);
    svg << dp_erm::RenderSvg(*result);
  }
  return 0;
}

// Mean excess risk against the packing scale min(n, p/ε) per grid point.
int RunLowerBound(const ExperimentConfig& config) {
  auto result = dp_erm::RunExperiment(config);
  if (!result.ok()) return Fail(result.status());
  std::ostringstream out;
  out << "mechanism,instance,n,p,eps,mean_excess,stderr,scale,ratio,status\n";
  for (const dp_erm::TrialRow& agg : result->aggregates) {
    double scale = std::min(static_cast<double>(agg.point.n),
                            agg.point.p / agg.point.eps);
    out << agg.mechanism << ',' << agg.instance << ',' << agg.point.n << ','
        << agg.point.p << ',' << dp_erm::FormatDouble(agg.point.eps) << ','
        << dp_erm::FormatDouble(agg.excess_risk) << ','
        << dp_erm::FormatDouble(agg.stderr_value) << ','
        << dp_erm::FormatDouble(scale) << ','
        << dp_erm::FormatDouble(agg.excess_risk / scale) << ',' << agg.status
        << '\n';
  }
  absl::Status status = Emit(config, out.str());
  return status.ok() ? 0 : Fail(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private ERM experiments"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);

  ExperimentFlags run_flags, sweep_flags, lb_flags;
  CLI::App* run = app.add_subcommand("run", "Run one experiment point");
  AddExperimentFlags(run, &run_flags);
  CLI::App* sweep = app.add_subcommand("sweep", "Run a parameter grid");
  AddExperimentFlags(sweep, &sweep_flags);
  CLI::App* lowerbound =
      app.add_subcommand("lowerbound", "Evaluate mechanisms on hard instances");
  AddExperimentFlags(lowerbound, &lb_flags);

  dp_erm::SampleTestConfig sample;
  std::string sample_mode = "strict";
  std::optional<int64_t> sample_steps, sample_cells;
  CLI::App* sample_test = app.add_subcommand(
      "sample-test", "Compare the init_samp walk with its exact oracle");
  sample_test->add_option("--p", sample.p, "Dimension (unit ball)");
  sample_test->add_option("--eps", sample.eps_tilde, "Sampler accuracy");
  sample_test->add_option("--slope", sample.slope, "f(theta) = slope*theta_1");
  sample_test->add_option("--samples", sample.samples, "Walks to run");
  sample_test->add_option("--seed", sample.seed, "RNG seed");
  sample_test->add_option("--mode", sample_mode, "strict|heuristic")
      ->check(CLI::IsMember({"strict", "heuristic"}));
  sample_test->add_option("--steps", sample_steps, "Steps (heuristic only)");
  sample_test->add_option("--cells", sample_cells,
                          "Cells per axis (heuristic only)");

  dp_erm::AcceptanceOptions accept_options;
  bool accept_quiet = false;
  CLI::App* accept = app.add_subcommand("accept", "Run the acceptance suite");
  accept->add_option("--seed", accept_options.seed, "Master seed");
  accept->add_option("--only", accept_options.only, "Criterion ids")
      ->delimiter(',')
      ->check(CLI::Range(1, dp_erm::kCriterionCount));
  accept->add_flag("--halve-sigma-sq", accept_options.halve_sigma_sq,
                   "Calibrate Noise-GD with sigma^2/2 in criterion 2");
  accept->add_flag("--quiet", accept_quiet, "Verdict lines only");

  CLI11_PARSE(app, argc, argv);

  for (auto [cmd, flags] : {std::pair{run, &run_flags},
                            std::pair{sweep, &sweep_flags},
                            std::pair{lowerbound, &lb_flags}}) {
    if (!cmd->parsed()) continue;
    ExperimentConfig config;
    absl::Status status = BuildConfig(cmd, *flags, &config);
    if (!status.ok()) return Fail(status);
    if (cmd == lowerbound) return RunLowerBound(config);
    return RunSweep(config, cmd == run);
  }

  if (sample_test->parsed()) {
    sample.options.mode = sample_mode == "strict"
                              ? dp_erm::SamplerMode::kStrict
                              : dp_erm::SamplerMode::kHeuristic;
    sample.options.steps_override = sample_steps;
    sample.options.cells_per_axis_override = sample_cells;
    auto report = dp_erm::SampleTest(sample);
    if (!report.ok()) return Fail(report.status());
    std::cout << "cells=" << report->cells << "\nsteps=" << report->steps
              << "\noracle_dist_inf="
              << dp_erm::FormatDouble(report->oracle_dist_inf)
              << "\nempirical_dist_inf="
              << dp_erm::FormatDouble(report->empirical_dist_inf)
              << "\nstat_tolerance="
              << dp_erm::FormatDouble(report->stat_tolerance)
              << "\nin_body_rate="
              << dp_erm::FormatDouble(report->in_body_rate) << '\n';
    return 0;
  }

  if (accept->parsed()) {
    accept_options.verbose = !accept_quiet;
    auto results = dp_erm::RunAcceptanceSuite(accept_options, std::cout);
    bool all = std::all_of(results.begin(), results.end(),
                           [](const auto& r) { return r.pass; });
    return all ? 0 : 1;
  }
  return 0;
}
