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

// Privacy parameter calculators and the audit record attached to runs.
// All logarithms are natural.

#ifndef DP_ERM_PRIVACY_H_
#define DP_ERM_PRIVACY_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dp_erm/status.h"

namespace dp_erm {

struct PrivacyParams {
  double epsilon = 1.0;
  double delta = 0.0;

  absl::Status Validate(bool require_delta = false) const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      return MakeError(ErrorKind::kInvalidArgument, "epsilon must be > 0");
    }
    if (!(delta >= 0.0 && delta < 1.0)) {
      return MakeError(ErrorKind::kInvalidArgument, "delta must be in [0,1)");
    }
    if (require_delta && delta == 0.0) {
      return MakeError(ErrorKind::kInvalidArgument, "delta must be > 0");
    }
    return absl::OkStatus();
  }
};

// σ² = 32 L² n² log(n/δ) log(1/δ) / ε².
inline absl::StatusOr<double> NoiseGdSigmaSq(double lipschitz, int64_t n,
                                             double epsilon, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "delta must be in (0,1)");
  }
  if (n < 2 || !(lipschitz > 0.0) || !(epsilon > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "need n >= 2, L > 0 and epsilon > 0");
  }
  const double nd = static_cast<double>(n);
  return 32.0 * lipschitz * lipschitz * nd * nd * std::log(nd / delta) *
         std::log(1.0 / delta) / (epsilon * epsilon);
}

// ε' = √(2T ln(1/δ')) ε + T ε (e^ε − 1) for T-fold adaptive composition.
inline absl::StatusOr<double> StrongComposition(double epsilon_step,
                                                int64_t steps,
                                                double delta_prime) {
  if (!(epsilon_step > 0.0) || !std::isfinite(epsilon_step) || steps < 1) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "need epsilon_step > 0 and T >= 1");
  }
  if (!(delta_prime > 0.0 && delta_prime < 1.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "delta' must be in (0,1)");
  }
  const double t = static_cast<double>(steps);
  return std::sqrt(2.0 * t * std::log(1.0 / delta_prime)) * epsilon_step +
         t * epsilon_step * std::expm1(epsilon_step);
}

// Running an ε-DP algorithm (ε ≤ 1) on a uniformly random γ-fraction of the
// data gives 2γε.
inline absl::StatusOr<double> SubsampleAmplification(double epsilon_base,
                                                     double gamma) {
  if (!(epsilon_base > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "epsilon must be > 0");
  }
  if (epsilon_base > 1.0) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "amplification requires a base epsilon <= 1");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "gamma must be in (0,1)");
  }
  return 2.0 * gamma * epsilon_base;
}

// Per-step privacy-loss bound of the Gaussian update n∇ℓ + b, b ~ N(0, σ²I):
// with probability 1 − δ₀ the loss is at most (s/σ)√(2 ln(1/δ₀)) + s²/(2σ²),
// where s = 2nL bounds the change of n∇ℓ between neighbouring records.
inline double GaussianStepLossBound(double lipschitz, int64_t n,
                                    double sigma_sq, double delta0) {
  const double s = 2.0 * static_cast<double>(n) * lipschitz;
  const double sigma = std::sqrt(sigma_sq);
  return (s / sigma) * std::sqrt(2.0 * std::log(1.0 / delta0)) +
         s * s / (2.0 * sigma_sq);
}

// Smallest δ for which adding N(0, σ²I) to a query of ℓ₂ sensitivity s is
// (ε, δ)-DP: Φ(s/2σ − εσ/s) − e^ε Φ(−s/2σ − εσ/s).
inline double GaussianMechanismDelta(double sensitivity, double sigma,
                                     double epsilon) {
  auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double a = sensitivity / (2.0 * sigma);
  const double b = epsilon * sigma / sensitivity;
  return std::max(0.0, phi(a - b) - std::exp(epsilon) * phi(-a - b));
}

struct NoiseGdAudit {
  double sigma_sq = 0.0;
  // The per-step figure the analysis claims: ε/(2√log(1/δ)).
  double claimed_step_epsilon = 0.0;
  // Recomputed from σ² with δ₀ = δ/2.
  double step_epsilon = 0.0;
  double amplified_epsilon = 0.0;
  int64_t steps = 0;
  double delta_prime = 0.0;
  double total_epsilon = 0.0;
  double target_epsilon = 0.0;
  // Smallest factor c with c·σ² passing the same chain.
  double sigma_sq_factor_needed = 0.0;
  bool ok = false;
  std::string detail;
};

namespace internal {

inline double ChainTotal(double lipschitz, int64_t n, double sigma_sq,
                         double delta, double* step, double* amplified) {
  double eps_step = GaussianStepLossBound(lipschitz, n, sigma_sq, delta / 2.0);
  if (step != nullptr) *step = eps_step;
  if (eps_step > 1.0) return std::numeric_limits<double>::infinity();
  double amp = 2.0 * eps_step / static_cast<double>(n);
  if (amplified != nullptr) *amplified = amp;
  const double t = static_cast<double>(n) * static_cast<double>(n);
  return std::sqrt(2.0 * t * std::log(2.0 / delta)) * amp +
         t * amp * std::expm1(amp);
}

}  // namespace internal

// Recomputes the Noise-GD privacy chain: per-step Gaussian bound, then
// amplification by sampling one of n records, then strong composition over
// T = n² steps with δ' = δ/2. Never fails on the verdict; see
// NoiseGdPrivacyCheck for the asserting form.
inline absl::StatusOr<NoiseGdAudit> ComputeNoiseGdAudit(double lipschitz,
                                                        int64_t n,
                                                        double epsilon,
                                                        double delta,
                                                        double sigma_sq) {
  if (!(delta > 0.0 && delta < 1.0) || n < 2 || !(lipschitz > 0.0) ||
      !(epsilon > 0.0) || !(sigma_sq > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "need L, epsilon, sigma^2 > 0, n >= 2, delta in (0,1)");
  }
  const double claimed = epsilon / (2.0 * std::sqrt(std::log(1.0 / delta)));
  if (claimed > 1.0) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "epsilon/(2 sqrt(log(1/delta))) must be <= 1");
  }
  NoiseGdAudit audit;
  audit.sigma_sq = sigma_sq;
  audit.claimed_step_epsilon = claimed;
  audit.steps = n * n;
  audit.delta_prime = delta / 2.0;
  audit.target_epsilon = epsilon;
  audit.total_epsilon = internal::ChainTotal(
      lipschitz, n, sigma_sq, delta, &audit.step_epsilon,
      &audit.amplified_epsilon);
  audit.ok = audit.total_epsilon <= epsilon;

  double lo = 0.0;
  double hi = 1.0;
  while (internal::ChainTotal(lipschitz, n, hi * sigma_sq, delta, nullptr,
                              nullptr) > epsilon) {
    hi *= 2.0;
  }
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    if (internal::ChainTotal(lipschitz, n, mid * sigma_sq, delta, nullptr,
                             nullptr) > epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  audit.sigma_sq_factor_needed = hi;
  audit.detail = absl::StrCat(
      "step=", audit.step_epsilon, " (claimed ", claimed, "), amplified=",
      audit.amplified_epsilon, ", composed over T=", audit.steps, " with delta'=",
      audit.delta_prime, ": total=", audit.total_epsilon, " vs epsilon=",
      epsilon, "; sigma^2 factor needed=", audit.sigma_sq_factor_needed,
      "; note: sigma^2 uses log(1/delta) although the chain spends delta/2 "
      "twice");
  return audit;
}

// Asserting form: calibration-bug error when the composed total exceeds ε.
inline absl::StatusOr<NoiseGdAudit> NoiseGdPrivacyCheck(
    double lipschitz, int64_t n, double epsilon, double delta,
    std::optional<double> sigma_sq = std::nullopt) {
  double s2 = 0.0;
  if (sigma_sq.has_value()) {
    s2 = *sigma_sq;
  } else {
    DP_ERM_ASSIGN_OR_RETURN(s2, NoiseGdSigmaSq(lipschitz, n, epsilon, delta));
  }
  DP_ERM_ASSIGN_OR_RETURN(NoiseGdAudit audit,
                          ComputeNoiseGdAudit(lipschitz, n, epsilon, delta, s2));
  if (!audit.ok) {
    return MakeError(ErrorKind::kCalibrationBug, audit.detail);
  }
  return audit;
}

// One stage of a mechanism's budget, as an exact fraction of the declared
// (ε, δ).
struct BudgetStage {
  std::string name;
  int64_t epsilon_num = 0;
  int64_t epsilon_den = 1;
  int64_t delta_num = 0;
  int64_t delta_den = 1;
};

struct PrivacyAudit {
  PrivacyParams declared;
  std::vector<BudgetStage> stages;
  // False for heuristic sampler runs or debug settings that remove noise.
  bool is_private = true;
  // False when an internal privacy check failed.
  bool ok = true;
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::string> notes;

  void AddStage(std::string name, int64_t eps_num, int64_t eps_den,
                int64_t delta_num = 0, int64_t delta_den = 1) {
    stages.push_back(BudgetStage{std::move(name), eps_num, eps_den, delta_num,
                                 delta_den});
  }
  void AddValue(std::string key, double value) {
    values.emplace_back(std::move(key), value);
  }
  // Nests another audit's stages, scaling their shares by num/den.
  void AddScaled(const PrivacyAudit& inner, const std::string& prefix,
                 int64_t eps_num, int64_t eps_den, int64_t delta_num,
                 int64_t delta_den) {
    for (const BudgetStage& s : inner.stages) {
      stages.push_back(BudgetStage{absl::StrCat(prefix, s.name),
                                   s.epsilon_num * eps_num,
                                   s.epsilon_den * eps_den,
                                   s.delta_num * delta_num,
                                   s.delta_den * delta_den});
    }
    for (const auto& [k, v] : inner.values) {
      values.emplace_back(absl::StrCat(prefix, k), v);
    }
    for (const std::string& note : inner.notes) {
      notes.push_back(absl::StrCat(prefix, note));
    }
    is_private = is_private && inner.is_private;
    ok = ok && inner.ok;
  }
};

namespace internal {

// Sum of fractions num_i/den_i compared against 1, in exact integer
// arithmetic (reduced at every step).
inline bool FractionsAtMostOne(
    const std::vector<std::pair<int64_t, int64_t>>& fractions) {
  int64_t num = 0;
  int64_t den = 1;
  for (auto [a, b] : fractions) {
    if (b <= 0 || a < 0) return false;
    int64_t g = std::gcd(a, b);
    a /= g;
    b /= g;
    int64_t l = std::lcm(den, b);
    num = num * (l / den) + a * (l / b);
    den = l;
    int64_t r = std::gcd(num, den);
    if (r > 1) {
      num /= r;
      den /= r;
    }
  }
  return num <= den;
}

}  // namespace internal

// Exact check that the recorded stages never exceed the declared budget.
inline bool BudgetWithinDeclared(const PrivacyAudit& audit) {
  std::vector<std::pair<int64_t, int64_t>> eps;
  std::vector<std::pair<int64_t, int64_t>> del;
  for (const BudgetStage& s : audit.stages) {
    eps.emplace_back(s.epsilon_num, s.epsilon_den);
    del.emplace_back(s.delta_num, s.delta_den);
  }
  return internal::FractionsAtMostOne(eps) &&
         internal::FractionsAtMostOne(del);
}

}  // namespace dp_erm

#endif  // DP_ERM_PRIVACY_H_
