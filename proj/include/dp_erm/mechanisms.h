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

// Private ERM mechanisms. Every mechanism takes the dataset, the loss, the
// body, a privacy budget and a caller-owned URBG, and returns the private
// point together with a budget audit.

#ifndef DP_ERM_MECHANISMS_H_
#define DP_ERM_MECHANISMS_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dp_erm/geometry.h"
#include "dp_erm/losses.h"
#include "dp_erm/privacy.h"
#include "dp_erm/sampler.h"
#include "dp_erm/solver.h"
#include "dp_erm/status.h"

namespace dp_erm {

struct MechanismOutput {
  Vector theta;
  PrivacyAudit audit;
};

struct RunReport {
  Vector theta;
  double excess_risk = 0.0;
  double runtime_ms = 0.0;
  uint64_t seed = 0;
  PrivacyAudit audit;
  absl::Status status;
};

namespace internal {

template <typename URBG>
Vector GaussianVector(int p, double sigma, URBG& rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  Vector v(p);
  for (int j = 0; j < p; ++j) v(j) = normal(rng);
  return v;
}

template <typename URBG>
Vector UniformDirection(int p, URBG& rng) {
  Vector v;
  double norm = 0.0;
  do {
    v = GaussianVector(p, 1.0, rng);
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

inline absl::Status CheckInputs(const Dataset& data, const LossFunction& loss,
                                const ConvexBody& body) {
  return CheckDataset(loss, Vector::Zero(body.dimension()), data);
}

inline PrivacyAudit SingleStageAudit(const PrivacyParams& privacy,
                                     const std::string& name,
                                     bool uses_delta) {
  PrivacyAudit audit;
  audit.declared = privacy;
  audit.AddStage(name, 1, 1, uses_delta ? 1 : 0, 1);
  return audit;
}

}  // namespace internal

// Noise with density ∝ exp(−‖b‖/scale): Gamma(p, scale) norm, uniform
// direction.
template <typename URBG>
Vector GammaNormNoise(int p, double scale, URBG& rng) {
  std::gamma_distribution<double> gamma(static_cast<double>(p), scale);
  double norm = gamma(rng);
  return internal::UniformDirection(p, rng) * norm;
}

// ---------------------------------------------------------------------------
// Noisy gradient descent.

enum class LearningRate {
  // ‖C‖₂/√(t(n²L² + pσ²)).
  kLipschitz,
  // 1/(Δnt).
  kStronglyConvex,
};

struct NoiseGdOptions {
  LearningRate rate = LearningRate::kLipschitz;
  // Uses Σᵢ∇ℓ(θ;dᵢ) instead of n∇ℓ(θ;d) for a sampled d.
  bool full_gradient = false;
  // Replaces the calibrated σ²; the run is then labelled non-private unless
  // the override is at least the calibrated value.
  std::optional<double> sigma_sq_override;
};

template <typename URBG>
absl::StatusOr<MechanismOutput> NoiseGd(const Dataset& data,
                                        const LossFunction& loss,
                                        const ConvexBody& body,
                                        const PrivacyParams& privacy,
                                        const NoiseGdOptions& options,
                                        URBG& rng) {
  DP_ERM_RETURN_IF_ERROR(privacy.Validate(/*require_delta=*/true));
  DP_ERM_RETURN_IF_ERROR(internal::CheckInputs(data, loss, body));
  const int64_t n = data.size();
  if (n < 2) {
    return MakeError(ErrorKind::kInvalidArgument, "noise_gd needs n >= 2");
  }
  if (privacy.epsilon / (2.0 * std::sqrt(std::log(1.0 / privacy.delta))) >
      1.0) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "epsilon/(2 sqrt(log(1/delta))) must be <= 1");
  }
  const double delta_sc = loss.strong_convexity;
  if (options.rate == LearningRate::kStronglyConvex && !(delta_sc > 0.0)) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "strongly convex rate needs a strongly convex loss");
  }
  const double lipschitz = loss.lipschitz;
  DP_ERM_ASSIGN_OR_RETURN(
      double calibrated,
      NoiseGdSigmaSq(lipschitz, n, privacy.epsilon, privacy.delta));
  double sigma_sq = options.sigma_sq_override.value_or(calibrated);
  if (!(sigma_sq >= 0.0) || !std::isfinite(sigma_sq)) {
    return MakeError(ErrorKind::kInvalidArgument, "sigma^2 must be >= 0");
  }

  PrivacyAudit audit =
      internal::SingleStageAudit(privacy, "noise-gd", /*uses_delta=*/true);
  audit.AddValue("sigma_sq", sigma_sq);
  audit.AddValue("sigma_sq_calibrated", calibrated);
  audit.is_private = sigma_sq >= calibrated;
  if (sigma_sq > 0.0) {
    DP_ERM_ASSIGN_OR_RETURN(
        NoiseGdAudit chain,
        ComputeNoiseGdAudit(lipschitz, n, privacy.epsilon, privacy.delta,
                            sigma_sq));
    audit.ok = chain.ok;
    audit.AddValue("step_epsilon", chain.step_epsilon);
    audit.AddValue("claimed_step_epsilon", chain.claimed_step_epsilon);
    audit.AddValue("amplified_epsilon", chain.amplified_epsilon);
    audit.AddValue("total_epsilon", chain.total_epsilon);
    audit.AddValue("sigma_sq_factor_needed", chain.sigma_sq_factor_needed);
    audit.notes.push_back(chain.detail);
  } else {
    audit.ok = false;
    audit.notes.push_back("sigma^2 = 0: no privacy");
  }

  const int p = body.dimension();
  const BodyOracle& oracle = body.oracle();
  const double diameter = body.L2Diameter();
  const double sigma = std::sqrt(sigma_sq);
  const int64_t updates = n * n - 1;
  const double nd = static_cast<double>(n);
  const double lipschitz_denom =
      nd * nd * lipschitz * lipschitz + p * sigma_sq;
  std::uniform_int_distribution<int64_t> pick(0, n - 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  Vector theta = oracle.Project(Vector::Zero(p));
  Vector direction(p);
  for (int64_t t = 1; t <= updates; ++t) {
    direction.setZero();
    if (options.full_gradient) {
      for (const Record& d : data.records) {
        loss.add_subgradient(theta, d, 1.0, &direction);
      }
    } else {
      loss.add_subgradient(theta, data.records[pick(rng)], nd, &direction);
    }
    if (sigma > 0.0) {
      for (int j = 0; j < p; ++j) direction(j) += sigma * normal(rng);
    }
    const double td = static_cast<double>(t);
    const double step =
        options.rate == LearningRate::kStronglyConvex
            ? 1.0 / (delta_sc * nd * td)
            : diameter / std::sqrt(td * lipschitz_denom);
    theta = oracle.Project(theta - step * direction);
  }
  if (!theta.allFinite()) {
    return MakeError(ErrorKind::kNumericalFailure, "noise_gd diverged");
  }
  audit.AddValue("updates", static_cast<double>(updates));
  return MechanismOutput{std::move(theta), std::move(audit)};
}

// ---------------------------------------------------------------------------
// Exponential mechanism: exact reference for p ≤ 3.

inline constexpr int kExactMaxDimension = 3;
inline constexpr int64_t kExactMaxCells = int64_t{1} << 17;
inline constexpr int64_t kExactMaxRejections = 100000000;

// Exact draws from ∝ exp(−s·L(θ;D)) on the body by rejection from a
// piecewise-constant envelope. On each grid cell with center c the envelope
// is exp(−s(L(c) − ‖g_c‖·r)) with g_c a subgradient at c and r the cell's
// half-diagonal, which dominates the target by convexity. Accepted draws
// follow the target law exactly.
class ExactExpMechSampler {
 public:
  static absl::StatusOr<ExactExpMechSampler> Create(
      const Dataset& data, const LossFunction& loss, const ConvexBody& body,
      double scale, int64_t max_cells = kExactMaxCells) {
    const int p = body.dimension();
    if (p > kExactMaxDimension) {
      return MakeError(ErrorKind::kUseEfficientVariant,
                       absl::StrCat("exact exponential mechanism supports p <= ",
                                    kExactMaxDimension, ", got ", p));
    }
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
      return MakeError(ErrorKind::kInvalidArgument, "scale must be >= 0");
    }
    DP_ERM_RETURN_IF_ERROR(internal::CheckInputs(data, loss, body));
    ExactExpMechSampler s;
    s.body_ = body;
    s.loss_ = loss;
    s.data_ = data;
    s.scale_ = scale;
    Vector center = body.oracle().BoxCenter();
    Vector half = body.oracle().BoxHalfWidths();
    s.lower_ = center - half;

    // Width giving s·n·L·r ≤ 1/2, coarsened to respect max_cells.
    const double slope = scale * data.size() * loss.lipschitz;
    const double width = slope > 0.0 ? 1.0 / (slope * std::sqrt(p))
                                     : std::numeric_limits<double>::infinity();
    std::vector<double> counts(p);
    double total = 1.0;
    for (int j = 0; j < p; ++j) {
      counts[j] = std::max(1.0, std::ceil(2.0 * half(j) / width));
      total *= counts[j];
    }
    if (total > static_cast<double>(max_cells)) {
      double shrink = std::pow(static_cast<double>(max_cells) / total, 1.0 / p);
      for (int j = 0; j < p; ++j) {
        counts[j] = std::max(1.0, std::floor(counts[j] * shrink));
      }
    }
    s.cells_.resize(p);
    s.width_.resize(p);
    for (int j = 0; j < p; ++j) {
      s.cells_[j] = static_cast<int64_t>(counts[j]);
      s.width_(j) = 2.0 * half(j) / counts[j];
    }
    const double radius = 0.5 * s.width_.norm();

    int64_t all = 1;
    for (int64_t c : s.cells_) all *= c;
    std::vector<double> log_weights;
    Vector grad(p);
    for (int64_t lin = 0; lin < all; ++lin) {
      Vector c = s.CellCenter(lin);
      Vector nearest = body.oracle().Project(c);
      if ((nearest - c).norm() > radius + kMembershipTolerance) continue;
      double value = internal::SumLoss(loss, c, data);
      grad.setZero();
      for (const Record& d : data.records) {
        loss.add_subgradient(c, d, 1.0, &grad);
      }
      s.live_.push_back(lin);
      s.envelope_.push_back(value - grad.norm() * radius);
      log_weights.push_back(-scale * s.envelope_.back());
    }
    if (s.live_.empty()) {
      return MakeError(ErrorKind::kEmptyBody, "no grid cell meets the body");
    }
    double top = *std::max_element(log_weights.begin(), log_weights.end());
    std::vector<double> weights(log_weights.size());
    for (size_t i = 0; i < weights.size(); ++i) {
      weights[i] = std::exp(log_weights[i] - top);
    }
    s.pick_ = std::discrete_distribution<size_t>(weights.begin(),
                                                 weights.end());
    return s;
  }

  int64_t live_cells() const { return static_cast<int64_t>(live_.size()); }
  int64_t proposals() const { return proposals_; }
  int64_t accepted() const { return accepted_; }
  const ConvexBody& body() const { return body_; }

  template <typename URBG>
  absl::StatusOr<Vector> Sample(URBG& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int p = body_.dimension();
    for (int64_t attempt = 0; attempt < kExactMaxRejections; ++attempt) {
      ++proposals_;
      size_t k = pick_(rng);
      Vector lo = CellCenter(live_[k]) - 0.5 * width_;
      Vector x(p);
      for (int j = 0; j < p; ++j) x(j) = lo(j) + unit(rng) * width_(j);
      if (!body_.Contains(x)) continue;
      double value = internal::SumLoss(loss_, x, data_);
      double log_accept = -scale_ * (value - envelope_[k]);
      if (log_accept >= 0.0 || std::log(unit(rng)) < log_accept) {
        ++accepted_;
        return x;
      }
    }
    return MakeError(ErrorKind::kNumericalFailure,
                     "exact sampler exceeded its rejection budget");
  }

 private:
  ExactExpMechSampler() = default;

  Vector CellCenter(int64_t lin) const {
    const int p = static_cast<int>(cells_.size());
    Vector c(p);
    for (int j = 0; j < p; ++j) {
      int64_t k = lin % cells_[j];
      lin /= cells_[j];
      c(j) = lower_(j) + (static_cast<double>(k) + 0.5) * width_(j);
    }
    return c;
  }

  ConvexBody body_ = *ConvexBody::Ball(1, 1.0);
  LossFunction loss_;
  Dataset data_;
  double scale_ = 0.0;
  Vector lower_;
  Vector width_;
  std::vector<int64_t> cells_;
  std::vector<int64_t> live_;
  std::vector<double> envelope_;
  std::discrete_distribution<size_t> pick_;
  int64_t proposals_ = 0;
  int64_t accepted_ = 0;
};

// s = ε/(2L‖C‖₂).
inline double ExpMechScale(const LossFunction& loss, const ConvexBody& body,
                           double epsilon) {
  return epsilon / (2.0 * loss.lipschitz * body.L2Diameter());
}

template <typename URBG>
absl::StatusOr<MechanismOutput> ExpMechExact(const Dataset& data,
                                             const LossFunction& loss,
                                             const ConvexBody& body,
                                             const PrivacyParams& privacy,
                                             URBG& rng) {
  DP_ERM_RETURN_IF_ERROR(privacy.Validate());
  DP_ERM_ASSIGN_OR_RETURN(
      ExactExpMechSampler sampler,
      ExactExpMechSampler::Create(data, loss, body,
                                  ExpMechScale(loss, body, privacy.epsilon)));
  DP_ERM_ASSIGN_OR_RETURN(Vector theta, sampler.Sample(rng));
  PrivacyAudit audit =
      internal::SingleStageAudit(privacy, "exp-mech-exact", false);
  audit.AddValue("scale", ExpMechScale(loss, body, privacy.epsilon));
  audit.AddValue("cells", static_cast<double>(sampler.live_cells()));
  return MechanismOutput{std::move(theta), std::move(audit)};
}

// ---------------------------------------------------------------------------
// Exponential mechanism through the log-concave sampler.

struct EfficientExpMechParams {
  double f_scale = 0.0;  // ε/(6L‖C‖₂)
  double eta = 0.0;      // Lipschitz constant of f on the body
  double eps_tilde = 0.0;
};

// f = (ε/6L‖C‖₂)·L(·;D), η = nε/(6‖C‖₂) (times G/L when the norm bound G of
// the subgradients exceeds the declared L), ε̃ = ε/3.
inline EfficientExpMechParams EfficientExpMechParameters(
    const Dataset& data, const LossFunction& loss, const ConvexBody& body,
    double epsilon) {
  EfficientExpMechParams params;
  const double diameter = body.L2Diameter();
  params.f_scale = epsilon / (6.0 * loss.lipschitz * diameter);
  const double g = std::max(loss.lipschitz, loss.subgradient_bound);
  params.eta = data.size() * epsilon / (6.0 * diameter) * (g / loss.lipschitz);
  params.eps_tilde = epsilon / 3.0;
  return params;
}

inline absl::StatusOr<EffSampler> MakeEfficientExpMechSampler(
    const Dataset& data, const LossFunction& loss, const ConvexBody& body,
    double epsilon, const SamplerOptions& options = {}) {
  DP_ERM_RETURN_IF_ERROR(internal::CheckInputs(data, loss, body));
  EfficientExpMechParams params =
      EfficientExpMechParameters(data, loss, body, epsilon);
  return EffSampler::Create(body, ScaledTotalLoss(loss, data, params.f_scale),
                            params.eta, params.eps_tilde, options);
}

template <typename URBG>
absl::StatusOr<MechanismOutput> ExpMechEfficient(const Dataset& data,
                                                 const LossFunction& loss,
                                                 const ConvexBody& body,
                                                 const PrivacyParams& privacy,
                                                 const SamplerOptions& options,
                                                 URBG& rng) {
  DP_ERM_RETURN_IF_ERROR(privacy.Validate());
  DP_ERM_ASSIGN_OR_RETURN(
      EffSampler sampler,
      MakeEfficientExpMechSampler(data, loss, body, privacy.epsilon, options));
  DP_ERM_ASSIGN_OR_RETURN(Vector theta, sampler.Sample(rng));
  PrivacyAudit audit =
      internal::SingleStageAudit(privacy, "exp-mech-efficient", false);
  audit.is_private = options.mode == SamplerMode::kStrict;
  audit.AddValue("walk_steps",
                 static_cast<double>(sampler.init().spec().steps));
  audit.AddValue("attempts_cap", static_cast<double>(sampler.attempts_cap()));
  audit.notes.push_back(
      "epsilon = 2*(epsilon/3) from the sampler error + epsilon/3 from the "
      "scaled exponential mechanism");
  if (!audit.is_private) {
    audit.notes.push_back("heuristic sampler settings: not private");
  }
  return MechanismOutput{std::move(theta), std::move(audit)};
}

// ---------------------------------------------------------------------------
// Output perturbation and localization.

struct OutPertResult {
  Vector theta_star;
  Vector noise;
  Vector theta0;
  double radius = 0.0;
  ConvexBody region = *ConvexBody::Ball(1, 1.0);
};

struct OutPertOptions {
  bool zero_noise = false;
  SolverSettings solver;
};

// θ₀ = Π_C(θ* + b) with ‖b‖ ~ Gamma(p, 2L/(nΔε)); C₀ = C ∩ B(θ₀, ζ·2Lp/(Δεn)).
template <typename URBG>
absl::StatusOr<OutPertResult> OutPert(const Dataset& data,
                                      const LossFunction& loss,
                                      const ConvexBody& body, double epsilon,
                                      double zeta, URBG& rng,
                                      const OutPertOptions& options = {}) {
  if (!(epsilon > 0.0) || !(zeta > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "epsilon and zeta must be positive");
  }
  const double delta_sc = loss.strong_convexity;
  if (!(delta_sc > 0.0)) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "output perturbation needs a strongly convex loss");
  }
  DP_ERM_ASSIGN_OR_RETURN(SolverResult opt,
                          Minimize(loss, data, body, options.solver));
  const int p = body.dimension();
  const double n = data.size();
  const double scale = 2.0 * loss.lipschitz / (n * delta_sc * epsilon);
  OutPertResult result;
  result.theta_star = opt.theta;
  result.noise = options.zero_noise ? Vector::Zero(p)
                                    : GammaNormNoise(p, scale, rng);
  result.theta0 = body.oracle().Project(opt.theta + result.noise);
  result.radius = zeta * scale * p;
  DP_ERM_ASSIGN_OR_RETURN(result.region,
                          IntersectBall(body, result.theta0, result.radius));
  return result;
}

enum class InnerSampler { kExact, kEfficient };

namespace internal {

// The body {u : c + r·u ∈ K}.
class AffineBodyOracle final : public BodyOracle {
 public:
  AffineBodyOracle(std::shared_ptr<const BodyOracle> base, Vector center,
                   double scale)
      : base_(std::move(base)), center_(std::move(center)), scale_(scale) {}

  int dimension() const override { return base_->dimension(); }
  bool Contains(const Vector& u) const override {
    return base_->Contains(center_ + scale_ * u);
  }
  Vector Project(const Vector& u) const override {
    return (base_->Project(center_ + scale_ * u) - center_) / scale_;
  }
  double L2Diameter() const override { return base_->L2Diameter() / scale_; }
  Vector BoxCenter() const override {
    return (base_->BoxCenter() - center_) / scale_;
  }
  Vector BoxHalfWidths() const override {
    return base_->BoxHalfWidths() / scale_;
  }
  std::string Describe() const override {
    return absl::StrCat("rescaled(", base_->Describe(), ")");
  }
  double InscribedRadius(const Vector& u) const override {
    return base_->InscribedRadius(center_ + scale_ * u) / scale_;
  }

 private:
  std::shared_ptr<const BodyOracle> base_;
  Vector center_;
  double scale_;
};

// Searches the segment from `start` towards the origin for the point with
// the largest inscribed radius in `region`.
inline std::pair<Vector, double> DeepestPoint(const ConvexBody& region,
                                              const Vector& start) {
  Vector best = start;
  double best_radius = region.InscribedRadius(start);
  for (int k = 1; k <= 40; ++k) {
    Vector c = start * (1.0 - k / 40.0);
    double r = region.InscribedRadius(c);
    if (r > best_radius) {
      best_radius = r;
      best = c;
    }
  }
  return {best, best_radius};
}

}  // namespace internal

// Exponential mechanism restricted to a region, with density ∝
// exp(−s·L(θ;D)), s = ε/(2L‖region‖₂).
template <typename URBG>
absl::StatusOr<Vector> RegionExpMech(const Dataset& data,
                                     const LossFunction& loss,
                                     const ConvexBody& region,
                                     const Vector& anchor, double epsilon,
                                     InnerSampler inner,
                                     const SamplerOptions& options,
                                     URBG& rng) {
  if (inner == InnerSampler::kExact) {
    DP_ERM_ASSIGN_OR_RETURN(
        ExactExpMechSampler sampler,
        ExactExpMechSampler::Create(data, loss, region,
                                    ExpMechScale(loss, region, epsilon)));
    return sampler.Sample(rng);
  }
  auto [center, radius] = internal::DeepestPoint(region, anchor);
  if (!(radius > 0.0)) {
    return MakeError(ErrorKind::kInvalidBody, "region has empty interior");
  }
  DP_ERM_ASSIGN_OR_RETURN(
      ConvexBody unit,
      ConvexBody::FromOracle(std::make_shared<internal::AffineBodyOracle>(
          region.shared_oracle(), center, radius)));
  EfficientExpMechParams params =
      EfficientExpMechParameters(data, loss, region, epsilon);
  ConvexFunction base = ScaledTotalLoss(loss, data, params.f_scale);
  ConvexFunction f{
      [base, center, radius](const Vector& u) {
        return base.value(center + radius * u);
      },
      [base, center, radius](const Vector& u) {
        return Vector(radius * base.subgradient(center + radius * u));
      }};
  DP_ERM_ASSIGN_OR_RETURN(
      EffSampler sampler,
      EffSampler::Create(unit, std::move(f), params.eta * radius,
                         params.eps_tilde, options));
  DP_ERM_ASSIGN_OR_RETURN(Vector u, sampler.Sample(rng));
  return Vector(center + radius * u);
}

struct LocalizedOptions {
  InnerSampler inner = InnerSampler::kExact;
  SamplerOptions sampler;
  OutPertOptions out_pert;
};

// Output perturbation at ε/2 with ζ = 3 ln n, then the exponential mechanism
// at ε/2 on C₀.
template <typename URBG>
absl::StatusOr<MechanismOutput> LocalizedExpMech(
    const Dataset& data, const LossFunction& loss, const ConvexBody& body,
    const PrivacyParams& privacy, const LocalizedOptions& options,
    URBG& rng) {
  DP_ERM_RETURN_IF_ERROR(privacy.Validate());
  if (data.size() < 2) {
    return MakeError(ErrorKind::kInvalidArgument, "localization needs n >= 2");
  }
  const double zeta = 3.0 * std::log(static_cast<double>(data.size()));
  DP_ERM_ASSIGN_OR_RETURN(
      OutPertResult stage1,
      OutPert(data, loss, body, privacy.epsilon / 2.0, zeta, rng,
              options.out_pert));
  DP_ERM_ASSIGN_OR_RETURN(
      Vector theta,
      RegionExpMech(data, loss, stage1.region, stage1.theta0,
                    privacy.epsilon / 2.0, options.inner, options.sampler,
                    rng));
  PrivacyAudit audit;
  audit.declared = privacy;
  audit.AddStage("output-perturbation", 1, 2);
  audit.AddStage("exp-mech-on-region", 1, 2);
  audit.AddValue("region_radius", stage1.radius);
  audit.AddValue("region_diameter", stage1.region.L2Diameter());
  audit.is_private = !options.out_pert.zero_noise &&
                     (options.inner == InnerSampler::kExact ||
                      options.sampler.mode == SamplerMode::kStrict);
  return MechanismOutput{std::move(theta), std::move(audit)};
}

// ζσ₀√p with ζ = √(3 ln n), σ₀² = 4L² ln(1/δ)/(Δ²ε²n²), at the given (ε, δ).
inline double GaussianLocalizationRadius(double lipschitz, double strong,
                                         int64_t n, double epsilon,
                                         double delta, int p) {
  const double nd = static_cast<double>(n);
  const double sigma0 = 2.0 * lipschitz * std::sqrt(std::log(1.0 / delta)) /
                        (strong * epsilon * nd);
  return std::sqrt(3.0 * std::log(nd)) * sigma0 * std::sqrt(p);
}

enum class GaussInner { kNoiseGd, kExpMechExact };

struct GaussLocalizeOptions {
  GaussInner inner = GaussInner::kNoiseGd;
  bool zero_noise = false;
  SolverSettings solver;
};

// Gaussian output perturbation at (ε/2, δ/2), then an (ε/2, δ/2) Lipschitz
// optimizer on C₀.
template <typename URBG>
absl::StatusOr<MechanismOutput> GaussOutPertLocalize(
    const Dataset& data, const LossFunction& loss, const ConvexBody& body,
    const PrivacyParams& privacy, const GaussLocalizeOptions& options,
    URBG& rng) {
  DP_ERM_RETURN_IF_ERROR(privacy.Validate(/*require_delta=*/true));
  const double delta_sc = loss.strong_convexity;
  if (!(delta_sc > 0.0)) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "localization needs a strongly convex loss");
  }
  if (data.size() < 2) {
    return MakeError(ErrorKind::kInvalidArgument, "localization needs n >= 2");
  }
  const int p = body.dimension();
  const int64_t n = data.size();
  const double eps_stage = privacy.epsilon / 2.0;
  const double delta_stage = privacy.delta / 2.0;
  DP_ERM_ASSIGN_OR_RETURN(SolverResult opt,
                          Minimize(loss, data, body, options.solver));
  const double sensitivity = 2.0 * loss.lipschitz / (delta_sc * n);
  const double sigma0 =
      sensitivity * std::sqrt(std::log(1.0 / delta_stage)) / eps_stage;
  Vector noise = options.zero_noise ? Vector::Zero(p)
                                    : internal::GaussianVector(p, sigma0, rng);
  Vector theta0 = body.oracle().Project(opt.theta + noise);
  const double radius = GaussianLocalizationRadius(
      loss.lipschitz, delta_sc, n, eps_stage, delta_stage, p);
  DP_ERM_ASSIGN_OR_RETURN(ConvexBody region,
                          IntersectBall(body, theta0, radius));

  PrivacyParams inner_privacy{eps_stage, delta_stage};
  PrivacyAudit audit;
  audit.declared = privacy;
  audit.AddStage("gaussian-output-perturbation", 1, 2, 1, 2);
  audit.AddValue("region_radius", radius);
  audit.AddValue("sigma0", sigma0);
  const double exact_delta =
      GaussianMechanismDelta(sensitivity, sigma0, eps_stage);
  audit.AddValue("gaussian_stage_exact_delta", exact_delta);
  if (exact_delta > delta_stage) {
    audit.ok = false;
    audit.notes.push_back(absl::StrCat(
        "Gaussian stage at sigma0 attains delta ", exact_delta,
        " > stage delta ", delta_stage));
  }
  Vector theta;
  if (options.inner == GaussInner::kNoiseGd) {
    DP_ERM_ASSIGN_OR_RETURN(
        MechanismOutput inner,
        NoiseGd(data, loss, region, inner_privacy, NoiseGdOptions{}, rng));
    theta = std::move(inner.theta);
    audit.AddScaled(inner.audit, "inner:", 1, 2, 1, 2);
  } else {
    DP_ERM_ASSIGN_OR_RETURN(
        MechanismOutput inner,
        ExpMechExact(data, loss, region, inner_privacy, rng));
    theta = std::move(inner.theta);
    audit.AddScaled(inner.audit, "inner:", 1, 2, 0, 1);
  }
  audit.is_private = audit.is_private && !options.zero_noise;
  return MechanismOutput{std::move(theta), std::move(audit)};
}

// ---------------------------------------------------------------------------
// Objective perturbation.

enum class ObjPertNoise { kGamma, kGaussian };

struct ObjPertOptions {
  ObjPertNoise noise = ObjPertNoise::kGamma;
  // Allows Δ_reg below β/(2ε) and b = 0; the output is labelled non-private.
  bool test_only = false;
  bool zero_noise = false;
  SolverSettings solver;
};

// argmin_{θ∈C} L(θ;D) + (Δ_reg/2)‖θ‖² + ⟨b, θ⟩ with b from the Gamma kernel
// ∝ exp(−ε‖b‖/2L) or N(0, 8L² ln(1/δ)/ε² I).
template <typename URBG>
absl::StatusOr<MechanismOutput> ObjectivePerturbation(
    const Dataset& data, const LossFunction& loss, const ConvexBody& body,
    double delta_reg, const PrivacyParams& privacy,
    const ObjPertOptions& options, URBG& rng) {
  const bool gaussian = options.noise == ObjPertNoise::kGaussian;
  DP_ERM_RETURN_IF_ERROR(privacy.Validate(gaussian));
  DP_ERM_RETURN_IF_ERROR(internal::CheckInputs(data, loss, body));
  if (!loss.smoothness.has_value()) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "objective perturbation needs a smooth loss");
  }
  if (!(delta_reg >= 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "regularizer must be >= 0");
  }
  const double beta = *loss.smoothness;
  const double threshold = beta / (2.0 * privacy.epsilon);
  // A strongly convex loss may supply the curvature itself.
  const bool curvature_ok = delta_reg >= threshold ||
                            loss.strong_convexity >= threshold;
  if (!curvature_ok && !options.test_only) {
    return MakeError(
        ErrorKind::kPreconditionViolation,
        absl::StrCat("regularizer ", delta_reg, " below beta/(2 eps) = ",
                     threshold));
  }
  const int p = body.dimension();
  const double lipschitz = loss.lipschitz;
  Vector b = Vector::Zero(p);
  if (!options.zero_noise) {
    if (gaussian) {
      const double sigma = std::sqrt(8.0 * lipschitz * lipschitz *
                                     std::log(1.0 / privacy.delta)) /
                           privacy.epsilon;
      b = internal::GaussianVector(p, sigma, rng);
    } else {
      b = GammaNormNoise(p, 2.0 * lipschitz / privacy.epsilon, rng);
    }
  }
  Objective obj = MakeObjective(loss, data, delta_reg, b, BodyRadius(body));
  double tolerance = options.solver.tolerance.value_or(
      DefaultSolverTolerance(loss, data.size(), body));
  DP_ERM_ASSIGN_OR_RETURN(SolverResult solved,
                          MinimizeObjective(obj, body, tolerance,
                                            options.solver));

  PrivacyAudit audit =
      internal::SingleStageAudit(privacy, "objective-perturbation", gaussian);
  audit.is_private = curvature_ok && !options.zero_noise;
  const double n = data.size();
  const double diameter = body.L2Diameter();
  const bool strongly_convex = loss.strong_convexity > 0.0;
  double bound = 0.0;
  std::string regime;
  if (strongly_convex) {
    const double sc = loss.strong_convexity;
    regime = gaussian ? "smooth-strongly-convex/gaussian"
                      : "smooth-strongly-convex/gamma";
    bound = gaussian ? lipschitz * lipschitz * p *
                           std::log(1.0 / privacy.delta) /
                           (n * sc * privacy.epsilon * privacy.epsilon)
                     : lipschitz * lipschitz * p * p /
                           (n * sc * privacy.epsilon * privacy.epsilon);
  } else {
    regime = gaussian ? "smooth-lipschitz/gaussian" : "smooth-lipschitz/gamma";
    bound = gaussian ? lipschitz * diameter *
                           std::sqrt(p * std::log(1.0 / privacy.delta)) /
                           privacy.epsilon
                     : lipschitz * diameter * p / privacy.epsilon;
  }
  audit.notes.push_back(absl::StrCat("regime: ", regime));
  audit.AddValue("risk_bound", bound);
  audit.AddValue("delta_reg", delta_reg);
  audit.AddValue("noise_norm", b.norm());
  return MechanismOutput{std::move(solved.theta), std::move(audit)};
}

// ---------------------------------------------------------------------------
// High-probability boosting.

// Index drawn with probability ∝ exp(ε·uᵢ/(2·sensitivity)).
template <typename URBG>
size_t FiniteExpMech(const std::vector<double>& utilities, double sensitivity,
                     double epsilon, URBG& rng) {
  std::vector<double> logits(utilities.size());
  for (size_t i = 0; i < utilities.size(); ++i) {
    logits[i] = epsilon * utilities[i] / (2.0 * sensitivity);
  }
  double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> weights(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    weights[i] = std::exp(logits[i] - top);
  }
  std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
  return pick(rng);
}

inline int64_t BoostRuns(double rho) {
  return std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(std::log(2.0 / rho))));
}

template <typename URBG>
using MechanismFn =
    std::function<absl::StatusOr<MechanismOutput>(const PrivacyParams&,
                                                  URBG&)>;

// k = ⌈ln(2/ρ)⌉ runs at (ε/2k, δ/k), then selection at ε/2 with utility
// −L(θᵢ;D) and sensitivity L‖C‖₂.
template <typename URBG>
absl::StatusOr<MechanismOutput> BoostHighProb(
    const MechanismFn<URBG>& mechanism, const Dataset& data,
    const LossFunction& loss, const ConvexBody& body,
    const PrivacyParams& privacy, double rho, URBG& rng) {
  DP_ERM_RETURN_IF_ERROR(privacy.Validate());
  if (!(rho > 0.0 && rho < 1.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "rho must be in (0,1)");
  }
  const int64_t k = BoostRuns(rho);
  PrivacyParams per_run{privacy.epsilon / (2.0 * k), privacy.delta / k};
  PrivacyAudit audit;
  audit.declared = privacy;
  std::vector<Vector> candidates;
  std::vector<double> utilities;
  for (int64_t i = 0; i < k; ++i) {
    DP_ERM_ASSIGN_OR_RETURN(MechanismOutput out, mechanism(per_run, rng));
    audit.AddScaled(out.audit, absl::StrCat("run", i, ":"), 1, 2 * k, 1, k);
    utilities.push_back(-internal::SumLoss(loss, out.theta, data));
    candidates.push_back(std::move(out.theta));
  }
  size_t chosen = FiniteExpMech(utilities, loss.lipschitz * body.L2Diameter(),
                                privacy.epsilon / 2.0, rng);
  audit.AddStage("selection", 1, 2);
  audit.AddValue("runs", static_cast<double>(k));
  audit.notes.push_back("epsilon split evenly between runs and selection");
  return MechanismOutput{std::move(candidates[chosen]), std::move(audit)};
}

// ---------------------------------------------------------------------------
// Dispatch by name, used by the harness.

enum class MechanismId {
  kNoiseGd,
  kNoiseGdDebug,
  kExpMechExact,
  kExpMechEfficient,
  kLocalized,
  kGaussLocalized,
  kObjectivePerturbation,
  kBoosted,
};

inline absl::StatusOr<MechanismId> ParseMechanismId(const std::string& name) {
  if (name == "noise-gd") return MechanismId::kNoiseGd;
  if (name == "noise-gd-debug") return MechanismId::kNoiseGdDebug;
  if (name == "exp-exact") return MechanismId::kExpMechExact;
  if (name == "exp-efficient") return MechanismId::kExpMechEfficient;
  if (name == "localized") return MechanismId::kLocalized;
  if (name == "gauss-localized") return MechanismId::kGaussLocalized;
  if (name == "objpert") return MechanismId::kObjectivePerturbation;
  if (name == "boosted") return MechanismId::kBoosted;
  return MakeError(ErrorKind::kInvalidArgument,
                   absl::StrCat("unknown mechanism '", name, "'"));
}

inline std::string MechanismName(MechanismId id) {
  switch (id) {
    case MechanismId::kNoiseGd:
      return "noise-gd";
    case MechanismId::kNoiseGdDebug:
      return "noise-gd-debug";
    case MechanismId::kExpMechExact:
      return "exp-exact";
    case MechanismId::kExpMechEfficient:
      return "exp-efficient";
    case MechanismId::kLocalized:
      return "localized";
    case MechanismId::kGaussLocalized:
      return "gauss-localized";
    case MechanismId::kObjectivePerturbation:
      return "objpert";
    case MechanismId::kBoosted:
      return "boosted";
  }
  return "unknown";
}

struct MechanismConfig {
  MechanismId id = MechanismId::kNoiseGd;
  PrivacyParams privacy;
  LearningRate rate = LearningRate::kLipschitz;
  bool full_gradient = false;
  SamplerOptions sampler;
  InnerSampler inner = InnerSampler::kExact;
  ObjPertNoise objpert_noise = ObjPertNoise::kGamma;
  // Defaults to max(β/(2ε), Lp/(ε‖C‖₂)).
  std::optional<double> delta_reg;
  // Mechanism boosted by kBoosted (must not be kBoosted).
  MechanismId boosted = MechanismId::kLocalized;
  double rho = 0.05;
};

template <typename URBG>
absl::StatusOr<MechanismOutput> RunMechanism(const MechanismConfig& config,
                                             const Dataset& data,
                                             const LossFunction& loss,
                                             const ConvexBody& body,
                                             URBG& rng) {
  switch (config.id) {
    case MechanismId::kNoiseGd: {
      NoiseGdOptions options;
      options.rate = config.rate;
      options.full_gradient = config.full_gradient;
      return NoiseGd(data, loss, body, config.privacy, options, rng);
    }
    case MechanismId::kNoiseGdDebug: {
      NoiseGdOptions options;
      options.rate = config.rate;
      options.full_gradient = true;
      options.sigma_sq_override = 0.0;
      return NoiseGd(data, loss, body, config.privacy, options, rng);
    }
    case MechanismId::kExpMechExact:
      return ExpMechExact(data, loss, body, config.privacy, rng);
    case MechanismId::kExpMechEfficient:
      return ExpMechEfficient(data, loss, body, config.privacy, config.sampler,
                              rng);
    case MechanismId::kLocalized: {
      LocalizedOptions options;
      options.inner = config.inner;
      options.sampler = config.sampler;
      return LocalizedExpMech(data, loss, body, config.privacy, options, rng);
    }
    case MechanismId::kGaussLocalized:
      return GaussOutPertLocalize(data, loss, body, config.privacy,
                                  GaussLocalizeOptions{}, rng);
    case MechanismId::kObjectivePerturbation: {
      ObjPertOptions options;
      options.noise = config.objpert_noise;
      double fallback = loss.lipschitz * body.dimension() /
                        (config.privacy.epsilon * body.L2Diameter());
      if (loss.smoothness.has_value()) {
        fallback = std::max(fallback,
                            *loss.smoothness / (2.0 * config.privacy.epsilon));
      }
      return ObjectivePerturbation(data, loss, body,
                                   config.delta_reg.value_or(fallback),
                                   config.privacy, options, rng);
    }
    case MechanismId::kBoosted: {
      if (config.boosted == MechanismId::kBoosted) {
        return MakeError(ErrorKind::kInvalidArgument,
                         "cannot boost the boosted mechanism");
      }
      MechanismConfig inner = config;
      inner.id = config.boosted;
      MechanismFn<URBG> fn = [&](const PrivacyParams& privacy, URBG& r) {
        MechanismConfig c = inner;
        c.privacy = privacy;
        return RunMechanism(c, data, loss, body, r);
      };
      return BoostHighProb(fn, data, loss, body, config.privacy, config.rho,
                           rng);
    }
  }
  return MakeError(ErrorKind::kInvalidArgument, "unknown mechanism");
}

}  // namespace dp_erm

#endif  // DP_ERM_MECHANISMS_H_
