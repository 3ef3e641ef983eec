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

// Acceptance suite: ten end-to-end criteria, each reported as one verdict
// line followed by indented detail lines.

#ifndef DP_ERM_ACCEPTANCE_H_
#define DP_ERM_ACCEPTANCE_H_

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace dp_erm {

struct AcceptanceOptions {
  uint64_t seed = 20240601;
  // Criterion ids to run; empty runs all ten.
  std::vector<int> only;
  // Replaces the Noise-GD calibration with σ²/2 in criterion 2.
  bool halve_sigma_sq = false;
  // Print detail lines under each verdict.
  bool verbose = true;
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = true;
  double seconds = 0.0;
  double limit_seconds = 0.0;
  std::vector<std::string> details;
};

inline constexpr int kCriterionCount = 10;

// "criterion=<id> verdict=PASS|FAIL seconds=<s> limit=<s> name=<name>".
std::string VerdictLine(const CriterionResult& result);

// Runs a single criterion; ids outside [1, 10] yield a failed result.
CriterionResult RunCriterion(int id, const AcceptanceOptions& options);

// Runs the selected criteria in order, streaming each verdict to `out` as
// soon as it is known.
std::vector<CriterionResult> RunAcceptanceSuite(
    const AcceptanceOptions& options, std::ostream& out);

}  // namespace dp_erm

#endif  // DP_ERM_ACCEPTANCE_H_
