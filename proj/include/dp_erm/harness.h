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

// Experiment driver: configuration, seeded trial execution, CSV and SVG
// output, generalization measurement and sampler diagnostics.
//
// Trial CSV schema (one header line, then rows):
//   kind,mechanism,instance,n,p,eps,delta,h,trial,seed,excess_risk,stderr,
//   runtime_ms,audit_ok,private,status
// `kind` is "trial" or "aggregate". Aggregate rows carry the mean excess risk
// over successful trials, its standard error, and the number of successful
// trials in the `trial` column. Floats use 17 significant digits.

#ifndef DP_ERM_HARNESS_H_
#define DP_ERM_HARNESS_H_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "absl/strings/strip.h"
#include "dp_erm/geometry.h"
#include "dp_erm/losses.h"
#include "dp_erm/lowerbounds.h"
#include "dp_erm/mechanisms.h"
#include "dp_erm/privacy.h"
#include "dp_erm/sampler.h"
#include "dp_erm/solver.h"
#include "dp_erm/status.h"

namespace dp_erm {

inline constexpr char kTrialCsvHeader[] =
    "kind,mechanism,instance,n,p,eps,delta,h,trial,seed,excess_risk,stderr,"
    "runtime_ms,audit_ok,private,status";

inline std::string FormatDouble(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

// SplitMix64 finalizer.
inline uint64_t MixSeed(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t TrialSeed(uint64_t master, uint64_t grid_index,
                          uint64_t trial) {
  return MixSeed(MixSeed(MixSeed(master) ^ grid_index) ^ trial);
}

struct ExperimentConfig {
  std::string mechanism = "noise-gd";
  // quadratic | linear | huber-d1 | huber-d2 | csv
  std::string instance = "quadratic";
  // Empty: the instance's own loss. Otherwise linear | squared | hinge |
  // huber-hinge | median (CSV instances only).
  std::string loss;
  std::string csv_path;
  bool csv_labels = false;
  // CSV instances only: ball | ball:<radius> | box:<half-width>. Built-in
  // instances fix their own body.
  std::string body;
  std::vector<int64_t> n = {100};
  std::vector<int> p = {2};
  std::vector<double> eps = {1.0};
  std::vector<double> delta = {1e-5};
  std::vector<double> h = {0.1};
  int trials = 10;
  uint64_t seed = 1;
  SamplerMode mode = SamplerMode::kStrict;
  std::optional<int64_t> steps;
  std::optional<int64_t> cells;
  double c_mix = 1.0;
  LearningRate rate = LearningRate::kStronglyConvex;
  InnerSampler inner = InnerSampler::kExact;
  ObjPertNoise noise = ObjPertNoise::kGamma;
  std::optional<double> delta_reg;
  std::string boosted = "localized";
  double rho = 0.05;
  bool record_timing = true;
  int threads = 1;
  std::string out;
  std::string svg;
};

namespace internal {

template <typename T>
absl::StatusOr<T> ParseNumber(absl::string_view text) {
  T value{};
  bool ok = false;
  std::string s(absl::StripAsciiWhitespace(text));
  if constexpr (std::is_same_v<T, double>) {
    ok = absl::SimpleAtod(s, &value);
  } else if constexpr (std::is_same_v<T, uint64_t>) {
    ok = absl::SimpleAtoi(s, &value);
  } else {
    int64_t wide = 0;
    ok = absl::SimpleAtoi(s, &wide);
    value = static_cast<T>(wide);
  }
  if (!ok) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("cannot parse number '", s, "'"));
  }
  return value;
}

template <typename T>
absl::StatusOr<std::vector<T>> ParseList(absl::string_view text) {
  std::vector<T> out;
  for (absl::string_view part : absl::StrSplit(text, ',', absl::SkipEmpty())) {
    DP_ERM_ASSIGN_OR_RETURN(T v, ParseNumber<T>(part));
    out.push_back(v);
  }
  if (out.empty()) {
    return MakeError(ErrorKind::kInvalidArgument, "empty list");
  }
  return out;
}

inline absl::StatusOr<bool> ParseBool(absl::string_view text) {
  std::string s(absl::StripAsciiWhitespace(text));
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  return MakeError(ErrorKind::kInvalidArgument,
                   absl::StrCat("cannot parse bool '", s, "'"));
}

}  // namespace internal

// "key = value" lines; '#' starts a comment.
inline absl::StatusOr<std::map<std::string, std::string>> ParseKeyValues(
    std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    size_t hash = view.find('#');
    if (hash != std::string_view::npos) view = view.substr(0, hash);
    absl::string_view stripped =
        absl::StripAsciiWhitespace(absl::string_view(view.data(), view.size()));
    if (stripped.empty()) continue;
    size_t eq = stripped.find('=');
    if (eq == absl::string_view::npos) {
      return MakeError(ErrorKind::kInvalidArgument,
                       absl::StrCat("line ", number, ": expected key = value"));
    }
    std::string key(absl::StripAsciiWhitespace(stripped.substr(0, eq)));
    std::string value(absl::StripAsciiWhitespace(stripped.substr(eq + 1)));
    out[key] = value;
  }
  return out;
}

inline absl::Status ApplyKeyValue(const std::string& key,
                                  const std::string& value,
                                  ExperimentConfig* config) {
  using internal::ParseList;
  using internal::ParseNumber;
  if (key == "mechanism") {
    DP_ERM_RETURN_IF_ERROR(ParseMechanismId(value).status());
    config->mechanism = value;
  } else if (key == "instance") {
    config->instance = value;
  } else if (key == "loss") {
    config->loss = value;
  } else if (key == "csv") {
    config->csv_path = value;
    config->instance = "csv";
  } else if (key == "body") {
    config->body = value;
  } else if (key == "csv_labels") {
    DP_ERM_ASSIGN_OR_RETURN(config->csv_labels, internal::ParseBool(value));
  } else if (key == "n") {
    DP_ERM_ASSIGN_OR_RETURN(config->n, ParseList<int64_t>(value));
  } else if (key == "p") {
    DP_ERM_ASSIGN_OR_RETURN(config->p, ParseList<int>(value));
  } else if (key == "eps") {
    DP_ERM_ASSIGN_OR_RETURN(config->eps, ParseList<double>(value));
  } else if (key == "delta") {
    DP_ERM_ASSIGN_OR_RETURN(config->delta, ParseList<double>(value));
  } else if (key == "h") {
    DP_ERM_ASSIGN_OR_RETURN(config->h, ParseList<double>(value));
  } else if (key == "trials") {
    DP_ERM_ASSIGN_OR_RETURN(config->trials, ParseNumber<int>(value));
  } else if (key == "seed") {
    DP_ERM_ASSIGN_OR_RETURN(config->seed, ParseNumber<uint64_t>(value));
  } else if (key == "mode") {
    if (value == "strict") {
      config->mode = SamplerMode::kStrict;
    } else if (value == "heuristic") {
      config->mode = SamplerMode::kHeuristic;
    } else {
      return MakeError(ErrorKind::kInvalidArgument,
                       "mode must be strict or heuristic");
    }
  } else if (key == "steps") {
    DP_ERM_ASSIGN_OR_RETURN(config->steps, ParseNumber<int64_t>(value));
  } else if (key == "cells") {
    DP_ERM_ASSIGN_OR_RETURN(config->cells, ParseNumber<int64_t>(value));
  } else if (key == "c_mix") {
    DP_ERM_ASSIGN_OR_RETURN(config->c_mix, ParseNumber<double>(value));
  } else if (key == "rate") {
    if (value == "lipschitz") {
      config->rate = LearningRate::kLipschitz;
    } else if (value == "strongly-convex") {
      config->rate = LearningRate::kStronglyConvex;
    } else {
      return MakeError(ErrorKind::kInvalidArgument,
                       "rate must be lipschitz or strongly-convex");
    }
  } else if (key == "inner") {
    if (value == "exact") {
      config->inner = InnerSampler::kExact;
    } else if (value == "efficient") {
      config->inner = InnerSampler::kEfficient;
    } else {
      return MakeError(ErrorKind::kInvalidArgument,
                       "inner must be exact or efficient");
    }
  } else if (key == "noise") {
    if (value == "gamma") {
      config->noise = ObjPertNoise::kGamma;
    } else if (value == "gaussian") {
      config->noise = ObjPertNoise::kGaussian;
    } else {
      return MakeError(ErrorKind::kInvalidArgument,
                       "noise must be gamma or gaussian");
    }
  } else if (key == "delta_reg") {
    DP_ERM_ASSIGN_OR_RETURN(config->delta_reg, ParseNumber<double>(value));
  } else if (key == "boosted") {
    DP_ERM_RETURN_IF_ERROR(ParseMechanismId(value).status());
    config->boosted = value;
  } else if (key == "rho") {
    DP_ERM_ASSIGN_OR_RETURN(config->rho, ParseNumber<double>(value));
  } else if (key == "timing") {
    DP_ERM_ASSIGN_OR_RETURN(config->record_timing, internal::ParseBool(value));
  } else if (key == "threads") {
    DP_ERM_ASSIGN_OR_RETURN(config->threads, ParseNumber<int>(value));
  } else if (key == "out") {
    config->out = value;
  } else if (key == "svg") {
    config->svg = value;
  } else {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("unknown config key '", key, "'"));
  }
  return absl::OkStatus();
}

inline absl::Status ApplyKeyValues(
    const std::map<std::string, std::string>& values,
    ExperimentConfig* config) {
  for (const auto& [key, value] : values) {
    DP_ERM_RETURN_IF_ERROR(ApplyKeyValue(key, value, config));
  }
  return absl::OkStatus();
}

inline absl::Status ValidateConfig(const ExperimentConfig& config) {
  if (config.trials < 1) {
    return MakeError(ErrorKind::kInvalidArgument, "trials must be >= 1");
  }
  if (config.n.empty() || config.p.empty() || config.eps.empty() ||
      config.delta.empty() || config.h.empty()) {
    return MakeError(ErrorKind::kInvalidArgument, "sweep axes must be non-empty");
  }
  if (config.threads < 1) {
    return MakeError(ErrorKind::kInvalidArgument, "threads must be >= 1");
  }
  if (config.instance != "csv" && !config.body.empty()) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "body applies only to the csv instance");
  }
  return ParseMechanismId(config.mechanism).status();
}

struct GridPoint {
  int64_t n = 0;
  int p = 0;
  double eps = 0.0;
  double delta = 0.0;
  double h = 0.0;
};

// Row-major over (n, p, eps, delta, h).
inline std::vector<GridPoint> ExpandGrid(const ExperimentConfig& config) {
  std::vector<GridPoint> grid;
  for (int64_t n : config.n) {
    for (int p : config.p) {
      for (double eps : config.eps) {
        for (double delta : config.delta) {
          for (double h : config.h) grid.push_back({n, p, eps, delta, h});
        }
      }
    }
  }
  return grid;
}

// A dataset with its loss and body, plus the loss used for risk
// measurement.
struct Problem {
  Dataset data;
  LossFunction loss;
  LossFunction risk_loss;
  ConvexBody body = *ConvexBody::Ball(1, 1.0);
};

inline absl::StatusOr<LossFunction> LossByName(const std::string& name,
                                               double h) {
  if (name == "linear") return LinearLoss(1.0);
  if (name == "squared") return SquaredDistanceLoss(1.0, 1.0);
  if (name == "hinge") return HingeLoss(1.0);
  if (name == "huber-hinge") return HuberizedHingeLoss(h, 1.0);
  if (name == "median") return EuclideanMedianLoss();
  return MakeError(ErrorKind::kInvalidArgument,
                   absl::StrCat("unknown loss '", name, "'"));
}

inline absl::StatusOr<ConvexBody> BodyByName(const std::string& name,
                                             int p) {
  if (name.empty() || name == "ball") return ConvexBody::Ball(p, 1.0);
  size_t colon = name.find(':');
  if (colon != std::string::npos) {
    std::string kind = name.substr(0, colon);
    DP_ERM_ASSIGN_OR_RETURN(
        double size, internal::ParseNumber<double>(name.substr(colon + 1)));
    if (kind == "ball") return ConvexBody::Ball(p, size);
    if (kind == "box") return ConvexBody::Box(Vector::Constant(p, size));
  }
  return MakeError(ErrorKind::kInvalidArgument,
                   absl::StrCat("unknown body '", name, "'"));
}

template <typename URBG>
absl::StatusOr<Problem> BuildProblem(const ExperimentConfig& config,
                                     const GridPoint& point, URBG& rng) {
  Problem problem;
  if (config.instance != "csv" && !config.body.empty()) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("instance '", config.instance,
                                  "' fixes its own body"));
  }
  if (config.instance == "quadratic" || config.instance == "linear") {
    absl::StatusOr<HardInstance> inst =
        config.instance == "quadratic"
            ? QuadraticInstance(point.n, point.p, point.eps, rng)
            : LinearInstance(point.n, point.p, point.eps, rng);
    DP_ERM_RETURN_IF_ERROR(inst.status());
    problem.data = std::move(inst->data);
    problem.loss = inst->loss;
    problem.body = inst->body;
  } else if (config.instance == "huber-d1" || config.instance == "huber-d2") {
    DP_ERM_ASSIGN_OR_RETURN(HuberizationPair pair,
                            HuberizationInstances(point.n, point.h));
    problem.data = config.instance == "huber-d1" ? pair.d1 : pair.d2;
    problem.loss = HuberizedHingeLoss(point.h, 1.0, HingeForm::kResidual);
    problem.risk_loss = HingeLoss(1.0, HingeForm::kResidual);
    problem.body = HuberizationBody();
    return problem;
  } else if (config.instance == "csv") {
    DP_ERM_ASSIGN_OR_RETURN(problem.data,
                            ReadDatasetCsv(config.csv_path, config.csv_labels));
    DP_ERM_ASSIGN_OR_RETURN(
        problem.body, BodyByName(config.body, problem.data.dimension()));
  } else {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("unknown instance '", config.instance, "'"));
  }
  if (!config.loss.empty()) {
    DP_ERM_ASSIGN_OR_RETURN(problem.loss, LossByName(config.loss, point.h));
  } else if (config.instance == "csv") {
    return MakeError(ErrorKind::kInvalidArgument,
                     "CSV instances need an explicit loss");
  }
  problem.risk_loss = problem.loss;
  return problem;
}

inline MechanismConfig ToMechanismConfig(const ExperimentConfig& config,
                                         const GridPoint& point) {
  MechanismConfig mc;
  mc.id = *ParseMechanismId(config.mechanism);
  mc.privacy = PrivacyParams{point.eps, point.delta};
  mc.rate = config.rate;
  mc.sampler.mode = config.mode;
  mc.sampler.steps_override = config.steps;
  mc.sampler.cells_per_axis_override = config.cells;
  mc.sampler.c_mix = config.c_mix;
  mc.inner = config.inner;
  mc.objpert_noise = config.noise;
  mc.delta_reg = config.delta_reg;
  mc.boosted = *ParseMechanismId(config.boosted);
  mc.rho = config.rho;
  return mc;
}

struct TrialRow {
  std::string kind = "trial";
  std::string mechanism;
  std::string instance;
  GridPoint point;
  int64_t trial = 0;
  uint64_t seed = 0;
  double excess_risk = 0.0;
  double stderr_value = 0.0;
  double runtime_ms = 0.0;
  bool audit_ok = false;
  bool is_private = false;
  std::string status = "ok";
};

inline std::string CsvStatus(const absl::Status& status) {
  if (status.ok()) return "ok";
  std::optional<std::string> kind = ErrorKindOf(status);
  return kind.has_value() ? *kind : "error";
}

inline RunReport RunTrial(const ExperimentConfig& config,
                          const GridPoint& point, uint64_t seed) {
  RunReport report;
  report.seed = seed;
  std::mt19937_64 rng(seed);
  const auto start = std::chrono::steady_clock::now();
  absl::StatusOr<Problem> problem = BuildProblem(config, point, rng);
  if (!problem.ok()) {
    report.status = problem.status();
    return report;
  }
  absl::StatusOr<MechanismOutput> out =
      RunMechanism(ToMechanismConfig(config, point), problem->data,
                   problem->loss, problem->body, rng);
  if (!out.ok()) {
    report.status = out.status();
    return report;
  }
  report.runtime_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
  report.theta = out->theta;
  report.audit = out->audit;
  absl::StatusOr<double> excess = ExcessRisk(
      out->theta, problem->risk_loss, problem->data, problem->body);
  if (!excess.ok()) {
    report.status = excess.status();
    return report;
  }
  report.excess_risk = *excess;
  return report;
}

inline void WriteRow(const TrialRow& row, bool record_timing,
                     std::ostream& out) {
  out << row.kind << ',' << row.mechanism << ',' << row.instance << ','
      << row.point.n << ',' << row.point.p << ',' << FormatDouble(row.point.eps)
      << ',' << FormatDouble(row.point.delta) << ','
      << FormatDouble(row.point.h) << ',' << row.trial << ',' << row.seed
      << ',' << FormatDouble(row.excess_risk) << ','
      << FormatDouble(row.stderr_value) << ','
      << FormatDouble(record_timing ? row.runtime_ms : 0.0) << ','
      << (row.audit_ok ? 1 : 0) << ',' << (row.is_private ? 1 : 0) << ','
      << row.status << '\n';
}

struct ExperimentResult {
  std::vector<TrialRow> trials;
  std::vector<TrialRow> aggregates;
};

// Runs every grid point and trial. Mechanism failures are recorded in the
// row's status column; the run continues.
inline absl::StatusOr<ExperimentResult> RunExperiment(
    const ExperimentConfig& config) {
  DP_ERM_RETURN_IF_ERROR(ValidateConfig(config));
  const std::vector<GridPoint> grid = ExpandGrid(config);
  const int64_t total = static_cast<int64_t>(grid.size()) * config.trials;
  ExperimentResult result;
  result.trials.resize(static_cast<size_t>(total));
  auto work = [&](int64_t index) {
    const int64_t g = index / config.trials;
    const int64_t t = index % config.trials;
    const GridPoint& point = grid[static_cast<size_t>(g)];
    const uint64_t seed = TrialSeed(config.seed, g, t);
    RunReport report = RunTrial(config, point, seed);
    TrialRow& row = result.trials[static_cast<size_t>(index)];
    row.mechanism = config.mechanism;
    row.instance = config.instance;
    row.point = point;
    row.trial = t;
    row.seed = seed;
    row.excess_risk = report.excess_risk;
    row.runtime_ms = report.runtime_ms;
    row.audit_ok = report.status.ok() && report.audit.ok &&
                   BudgetWithinDeclared(report.audit);
    row.is_private = report.status.ok() && report.audit.is_private;
    row.status = CsvStatus(report.status);
  };
  if (config.threads <= 1) {
    for (int64_t i = 0; i < total; ++i) work(i);
  } else {
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < config.threads; ++w) {
      pool.emplace_back([&] {
        for (int64_t i = next++; i < total; i = next++) work(i);
      });
    }
    for (std::thread& th : pool) th.join();
  }
  for (size_t g = 0; g < grid.size(); ++g) {
    TrialRow agg;
    agg.kind = "aggregate";
    agg.mechanism = config.mechanism;
    agg.instance = config.instance;
    agg.point = grid[g];
    agg.seed = config.seed;
    agg.audit_ok = true;
    agg.is_private = true;
    std::vector<double> values;
    double runtime = 0.0;
    int failures = 0;
    for (int t = 0; t < config.trials; ++t) {
      const TrialRow& row = result.trials[g * config.trials + t];
      agg.audit_ok = agg.audit_ok && row.audit_ok;
      agg.is_private = agg.is_private && row.is_private;
      if (row.status != "ok") {
        ++failures;
        continue;
      }
      values.push_back(row.excess_risk);
      runtime += row.runtime_ms;
    }
    agg.trial = static_cast<int64_t>(values.size());
    if (!values.empty()) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= values.size();
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      agg.excess_risk = mean;
      agg.stderr_value =
          values.size() > 1
              ? std::sqrt(var / (values.size() - 1) / values.size())
              : 0.0;
      agg.runtime_ms = runtime / values.size();
    }
    agg.status = failures == 0 ? "ok" : absl::StrCat(failures, "-failed");
    result.aggregates.push_back(agg);
  }
  return result;
}

inline void WriteExperimentCsv(const ExperimentResult& result,
                               bool record_timing, std::ostream& out) {
  out << kTrialCsvHeader << '\n';
  for (const TrialRow& row : result.trials) WriteRow(row, record_timing, out);
  for (const TrialRow& row : result.aggregates) {
    WriteRow(row, record_timing, out);
  }
}

// Checks that `csv` has the trial schema: the header, 16 columns per row, a
// known row kind and parseable numeric fields.
inline absl::Status ValidateTrialCsv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kTrialCsvHeader) {
    return MakeError(ErrorKind::kInvalidArgument, "bad or missing header");
  }
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    std::vector<std::string> fields = absl::StrSplit(line, ',');
    if (fields.size() != 16) {
      return MakeError(ErrorKind::kInvalidArgument,
                       absl::StrCat("line ", number, ": expected 16 columns"));
    }
    if (fields[0] != "trial" && fields[0] != "aggregate") {
      return MakeError(ErrorKind::kInvalidArgument,
                       absl::StrCat("line ", number, ": bad row kind"));
    }
    for (int col : {3, 4, 8, 9}) {
      uint64_t v = 0;
      if (!absl::SimpleAtoi(fields[col], &v)) {
        return MakeError(ErrorKind::kInvalidArgument,
                         absl::StrCat("line ", number, ": column ", col,
                                      " is not an integer"));
      }
    }
    for (int col : {5, 6, 7, 10, 11, 12}) {
      double v = 0.0;
      if (!absl::SimpleAtod(fields[col], &v)) {
        return MakeError(ErrorKind::kInvalidArgument,
                         absl::StrCat("line ", number, ": column ", col,
                                      " is not a number"));
      }
    }
    for (int col : {13, 14}) {
      if (fields[col] != "0" && fields[col] != "1") {
        return MakeError(ErrorKind::kInvalidArgument,
                         absl::StrCat("line ", number, ": column ", col,
                                      " is not a flag"));
      }
    }
  }
  return absl::OkStatus();
}

// Mean excess risk against n, one polyline per (p, eps, delta, h).
inline std::string RenderSvg(const ExperimentResult& result) {
  const double width = 640.0;
  const double height = 400.0;
  const double margin = 50.0;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const TrialRow& row : result.aggregates) {
    if (row.trial == 0) continue;
    double x = std::log10(static_cast<double>(row.point.n));
    double y = std::log10(std::max(row.excess_risk, 1e-12));
    series[absl::StrCat("p=", row.point.p, " eps=", row.point.eps,
                        " delta=", row.point.delta, " h=", row.point.h)]
        .emplace_back(x, y);
    x_lo = std::min(x_lo, x);
    x_hi = std::max(x_hi, x);
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;
  auto sx = [&](double x) {
    return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin);
  };
  auto sy = [&](double y) {
    return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin);
  };
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">"
      << "log10 mean excess risk vs log10 n</text>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin
      << "\" x2=\"" << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\""
      << margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  int color = 0;
  for (auto& [label, points] : series) {
    std::sort(points.begin(), points.end());
    svg << "<polyline fill=\"none\" stroke=\"" << kColors[color % 6]
        << "\" points=\"";
    for (const auto& [x, y] : points) svg << sx(x) << ',' << sy(y) << ' ';
    svg << "\"/>\n";
    svg << "<text x=\"" << width - margin - 150 << "\" y=\""
        << margin + 15 * color << "\" fill=\"" << kColors[color % 6]
        << "\" font-size=\"11\">" << label << "</text>\n";
    ++color;
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Generalization.

enum class FeatureDistribution {
  // Independent coordinates ±1/√p with P(+) = 0.75.
  kSign,
  // N(μ, I/p) with μ = 0.3·1/√p, scaled into the unit ball when needed.
  kGaussian,
};

template <typename URBG>
Record DrawRecord(FeatureDistribution dist, int p, URBG& rng) {
  Record r;
  r.x.resize(p);
  const double c = 1.0 / std::sqrt(static_cast<double>(p));
  if (dist == FeatureDistribution::kSign) {
    std::bernoulli_distribution coin(0.75);
    for (int j = 0; j < p; ++j) r.x(j) = coin(rng) ? c : -c;
  } else {
    std::normal_distribution<double> normal(0.3 * c, c);
    for (int j = 0; j < p; ++j) r.x(j) = normal(rng);
    double norm = r.x.norm();
    if (norm > 1.0) r.x /= norm;
  }
  // Labels follow a noisy halfspace through the all-ones direction.
  std::bernoulli_distribution flip(0.1);
  double score = r.x.sum();
  r.y = (score >= 0.0) != flip(rng) ? 1.0 : -1.0;
  r.has_label = true;
  return r;
}

struct GeneralizationConfig {
  ExperimentConfig base;
  FeatureDistribution distribution = FeatureDistribution::kSign;
  std::string loss = "huber-hinge";
  // Per-record regularizer Δ; negative selects the tuned value.
  double delta_reg = 0.0;
  int64_t test_samples = 100000;
  // Confidence parameter in the tuned Δ and the bound.
  double gamma = 0.1;
};

inline constexpr char kGeneralizationCsvHeader[] =
    "mechanism,n,p,eps,delta,trial,seed,delta_reg,empirical_excess,"
    "true_excess,gap,reg_term,bound,status";

// Δ balancing the strongly convex rate against the (Δ/2)‖C‖₂² bias, and the
// resulting bound √p(L+‖C‖₂)‖C‖₂(ln n)^{1/4}/√(nεγ).
inline double TunedRegularizer(double lipschitz, double diameter, int p,
                               int64_t n, double eps, double gamma) {
  return (lipschitz + diameter) / diameter *
         std::sqrt(2.0 * p * std::sqrt(std::log(static_cast<double>(n))) /
                   (n * eps * gamma));
}

inline double GeneralizationBound(double lipschitz, double diameter, int p,
                                  int64_t n, double eps, double gamma) {
  return std::sqrt(static_cast<double>(p)) * (lipschitz + diameter) *
         diameter * std::pow(std::log(static_cast<double>(n)), 0.25) /
         std::sqrt(n * eps * gamma);
}

struct GeneralizationRow {
  std::string mechanism;
  GridPoint point;
  int64_t trial = 0;
  uint64_t seed = 0;
  double delta_reg = 0.0;
  double empirical_excess = 0.0;
  double true_excess = 0.0;
  double gap = 0.0;
  double reg_term = 0.0;
  double bound = 0.0;
  std::string status = "ok";
};

inline absl::StatusOr<std::vector<GeneralizationRow>> GeneralizationReport(
    const GeneralizationConfig& config) {
  DP_ERM_RETURN_IF_ERROR(ValidateConfig(config.base));
  std::vector<GeneralizationRow> rows;
  const std::vector<GridPoint> grid = ExpandGrid(config.base);
  for (size_t g = 0; g < grid.size(); ++g) {
    const GridPoint& point = grid[g];
    DP_ERM_ASSIGN_OR_RETURN(LossFunction base, LossByName(config.loss, point.h));
    DP_ERM_ASSIGN_OR_RETURN(ConvexBody body, ConvexBody::Ball(point.p, 1.0));
    const double diameter = body.L2Diameter();
    // The test sample stands in for the population; it is shared by all
    // trials of a grid point.
    std::mt19937_64 test_rng(TrialSeed(config.base.seed ^ 0x7E57, g, 0));
    Dataset test;
    for (int64_t i = 0; i < config.test_samples; ++i) {
      test.records.push_back(
          DrawRecord(config.distribution, point.p, test_rng));
    }
    DP_ERM_ASSIGN_OR_RETURN(SolverResult population,
                            Minimize(base, test, body));
    const double population_min = population.value / test.size();
    for (int t = 0; t < config.base.trials; ++t) {
      GeneralizationRow row;
      row.mechanism = config.base.mechanism;
      row.point = point;
      row.trial = t;
      row.seed = TrialSeed(config.base.seed, g, t);
      std::mt19937_64 rng(row.seed);
      Dataset train;
      for (int64_t i = 0; i < point.n; ++i) {
        train.records.push_back(DrawRecord(config.distribution, point.p, rng));
      }
      row.delta_reg = config.delta_reg >= 0.0
                          ? config.delta_reg
                          : TunedRegularizer(base.lipschitz, diameter, point.p,
                                             point.n, point.eps, config.gamma);
      LossFunction trained =
          row.delta_reg > 0.0
              ? RegularizedLoss(base, row.delta_reg, 1, BodyRadius(body))
              : base;
      absl::StatusOr<MechanismOutput> out =
          RunMechanism(ToMechanismConfig(config.base, point), train, trained,
                       body, rng);
      if (!out.ok()) {
        row.status = CsvStatus(out.status());
        rows.push_back(row);
        continue;
      }
      absl::StatusOr<double> emp = ExcessRisk(out->theta, base, train, body);
      if (!emp.ok()) {
        row.status = CsvStatus(emp.status());
        rows.push_back(row);
        continue;
      }
      row.empirical_excess = *emp / point.n;
      row.true_excess =
          std::max(0.0, internal::SumLoss(base, out->theta, test) / test.size() -
                            population_min);
      row.gap = row.true_excess - row.empirical_excess;
      row.reg_term = 0.5 * row.delta_reg * diameter * diameter;
      row.bound = GeneralizationBound(base.lipschitz, diameter, point.p,
                                      point.n, point.eps, config.gamma);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void WriteGeneralizationCsv(const std::vector<GeneralizationRow>& rows,
                                   std::ostream& out) {
  out << kGeneralizationCsvHeader << '\n';
  for (const GeneralizationRow& r : rows) {
    out << r.mechanism << ',' << r.point.n << ',' << r.point.p << ','
        << FormatDouble(r.point.eps) << ',' << FormatDouble(r.point.delta)
        << ',' << r.trial << ',' << r.seed << ',' << FormatDouble(r.delta_reg)
        << ',' << FormatDouble(r.empirical_excess) << ','
        << FormatDouble(r.true_excess) << ',' << FormatDouble(r.gap) << ','
        << FormatDouble(r.reg_term) << ',' << FormatDouble(r.bound) << ','
        << r.status << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sampler diagnostics against the exact oracle.

struct SampleTestConfig {
  int p = 1;
  double eps_tilde = 0.5;
  // Linear loss slope ‖c‖ (0 for f ≡ 0).
  double slope = 0.0;
  int64_t samples = 10000;
  uint64_t seed = 1;
  SamplerOptions options;
};

struct SampleTestReport {
  int64_t cells = 0;
  int64_t steps = 0;
  // max over starts of Dist∞(e_u P^t, π); NaN if the grid is too large.
  double oracle_dist_inf = std::numeric_limits<double>::quiet_NaN();
  // max over cells of |log(empirical/π)|.
  double empirical_dist_inf = 0.0;
  // Three binomial standard errors of the log frequency, worst cell.
  double stat_tolerance = 0.0;
  double in_body_rate = 0.0;
};

// Runs the init_samp walk for f(θ) = slope·θ₁ on the unit ball.
inline absl::StatusOr<SampleTestReport> SampleTest(
    const SampleTestConfig& config) {
  DP_ERM_ASSIGN_OR_RETURN(ConvexBody body, ConvexBody::Ball(config.p, 1.0));
  const double slope = config.slope;
  ConvexFunction f{[slope](const Vector& x) { return slope * x(0); },
                   [slope](const Vector& x) {
                     Vector g = Vector::Zero(x.size());
                     g(0) = slope;
                     return g;
                   }};
  DP_ERM_ASSIGN_OR_RETURN(
      InitSampler sampler,
      InitSampler::Create(body, f, std::abs(slope), config.eps_tilde,
                          config.options));
  SampleTestReport report;
  const GridWalkSpec& spec = sampler.spec();
  report.cells = spec.total_cells();
  report.steps = spec.steps;
  DP_ERM_ASSIGN_OR_RETURN(StationaryDistribution stat, StationaryOracle(spec));
  absl::StatusOr<Eigen::MatrixXd> matrix = TransitionMatrix(spec);
  if (matrix.ok()) {
    Eigen::MatrixXd power = MatrixPower(*matrix, spec.steps);
    double worst = 0.0;
    for (Eigen::Index u = 0; u < power.rows(); ++u) {
      worst = std::max(worst, DistInf(power.row(u).transpose(), stat.pi));
    }
    report.oracle_dist_inf = worst;
  }
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> counts(stat.pi.size(), 0);
  int64_t in_body = 0;
  GridWalker& walker = sampler.walker();
  for (int64_t s = 0; s < config.samples; ++s) {
    DP_ERM_ASSIGN_OR_RETURN(std::vector<int64_t> cell, walker.RunChain(rng));
    ++counts[static_cast<size_t>(walker.Linear(cell))];
    if (body.Contains(walker.Jitter(cell, rng))) ++in_body;
  }
  report.in_body_rate = static_cast<double>(in_body) / config.samples;
  for (size_t c = 0; c < counts.size(); ++c) {
    double pi = stat.pi[c];
    double expected = pi * config.samples;
    double freq = static_cast<double>(counts[c]) / config.samples;
    double tol = 3.0 * std::sqrt((1.0 - pi) / expected);
    report.stat_tolerance = std::max(report.stat_tolerance, tol);
    if (counts[c] == 0) {
      report.empirical_dist_inf = std::numeric_limits<double>::infinity();
    } else {
      report.empirical_dist_inf =
          std::max(report.empirical_dist_inf, std::abs(std::log(freq / pi)));
    }
  }
  return report;
}

}  // namespace dp_erm

#endif  // DP_ERM_HARNESS_H_
