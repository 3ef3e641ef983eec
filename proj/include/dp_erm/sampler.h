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

// Log-concave sampling with a multiplicative (Dist∞) guarantee.
//
//  * GridWalker: lazy Metropolis walk on a γ-lattice of a box, followed by a
//    uniform draw inside the final cell.
//  * InitSampler: walk on the bounding box with weight e^{−f̄−ψ̄_α}, where f̄
//    is the Lipschitz extension of f and ψ̄_α the gauge penalty.
//  * EffSampler: retries InitSampler up to m times and falls back to the
//    uniform distribution on the unit ball.
//  * StationaryOracle / TransitionMatrix: exact references for small grids.

#ifndef DP_ERM_SAMPLER_H_
#define DP_ERM_SAMPLER_H_

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dp_erm/geometry.h"
#include "dp_erm/losses.h"
#include "dp_erm/status.h"

namespace dp_erm {

enum class SamplerMode {
  // Formula grid spacing and step count; required for private runs.
  kStrict,
  // Accepts overrides; outputs are labelled non-private.
  kHeuristic,
};

struct SamplerOptions {
  SamplerMode mode = SamplerMode::kStrict;
  double c_mix = 1.0;
  std::optional<int64_t> steps_override;
  std::optional<int64_t> cells_per_axis_override;
  // Walks longer than this are refused with budget-exceeded.
  int64_t max_steps = int64_t{1} << 40;
  // Optional wall-clock cap for a single walk.
  std::optional<double> max_seconds;
};

// ⌈C_mix (η'²τ²/ε̃²) p³ max(p log(η'τp/ε̃), η'τ)⌉.
inline absl::StatusOr<int64_t> WalkMixingSteps(double eta_prime, double tau,
                                               int p, double eps_tilde,
                                               double c_mix = 1.0) {
  if (!(eta_prime > 0.0) || !(tau > 0.0) || p < 1 || !(eps_tilde > 0.0) ||
      !(c_mix > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "mixing-step inputs must be positive");
  }
  const double et = eta_prime * tau;
  const double pd = static_cast<double>(p);
  const double steps = c_mix * (et * et / (eps_tilde * eps_tilde)) * pd * pd *
                       pd *
                       std::max(pd * std::log(et * pd / eps_tilde), et);
  if (!(steps < 9.0e18)) {
    return MakeError(ErrorKind::kBudgetExceeded,
                     absl::StrCat("mixing steps overflow: ", steps));
  }
  return static_cast<int64_t>(std::ceil(steps));
}

using LogWeightFn = std::function<absl::StatusOr<double>(const Vector&)>;

struct GridWalkSpec {
  Vector lower;
  Vector upper;
  LogWeightFn log_weight;
  // Lipschitz constant η' of log F.
  double lipschitz = 0.0;
  double eps_tilde = 0.0;
  // Nominal spacing ε̃/(2η'√p); the lattice uses edge/cells ≤ nominal so
  // that cells tile the box exactly.
  double nominal_spacing = 0.0;
  std::vector<int64_t> cells;
  Vector cell_width;
  int64_t steps = 0;
  SamplerMode mode = SamplerMode::kStrict;
  std::optional<double> max_seconds;

  int dimension() const { return static_cast<int>(cells.size()); }
  int64_t total_cells() const {
    int64_t total = 1;
    for (int64_t c : cells) total *= c;
    return total;
  }
};

inline absl::StatusOr<GridWalkSpec> MakeGridWalkSpec(
    const Vector& lower, const Vector& upper, LogWeightFn log_weight,
    double eta_prime, double eps_tilde, const SamplerOptions& options = {}) {
  const int p = static_cast<int>(lower.size());
  if (p < 1 || upper.size() != p || !((upper - lower).array() > 0.0).all()) {
    return MakeError(ErrorKind::kInvalidArgument, "degenerate cube");
  }
  if (!(eta_prime > 0.0) || !(eps_tilde > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "eta' and eps~ must be positive");
  }
  if (options.mode == SamplerMode::kStrict &&
      (options.steps_override.has_value() ||
       options.cells_per_axis_override.has_value())) {
    return MakeError(ErrorKind::kPreconditionViolation,
                     "overrides are non-private; use heuristic mode");
  }
  GridWalkSpec spec;
  spec.lower = lower;
  spec.upper = upper;
  spec.log_weight = std::move(log_weight);
  spec.lipschitz = eta_prime;
  spec.eps_tilde = eps_tilde;
  spec.mode = options.mode;
  spec.max_seconds = options.max_seconds;
  spec.nominal_spacing = eps_tilde / (2.0 * eta_prime * std::sqrt(p));
  spec.cell_width.resize(p);
  double log_total = 0.0;
  for (int j = 0; j < p; ++j) {
    double edge = upper(j) - lower(j);
    double count = options.cells_per_axis_override.has_value()
                       ? static_cast<double>(*options.cells_per_axis_override)
                       : std::ceil(edge / spec.nominal_spacing);
    if (!(count >= 1.0) || count > 4.0e18) {
      return MakeError(ErrorKind::kBudgetExceeded, "grid too fine");
    }
    log_total += std::log(count);
    spec.cells.push_back(static_cast<int64_t>(count));
    spec.cell_width(j) = edge / count;
  }
  if (log_total > std::log(4.0e18)) {
    return MakeError(ErrorKind::kBudgetExceeded, "grid has too many cells");
  }
  double tau = (upper - lower).maxCoeff();
  if (options.steps_override.has_value()) {
    if (*options.steps_override < 0) {
      return MakeError(ErrorKind::kInvalidArgument, "negative steps");
    }
    spec.steps = *options.steps_override;
  } else {
    DP_ERM_ASSIGN_OR_RETURN(
        spec.steps,
        WalkMixingSteps(eta_prime, tau, p, eps_tilde, options.c_mix));
  }
  if (spec.steps > options.max_steps) {
    return MakeError(ErrorKind::kBudgetExceeded,
                     absl::StrCat("walk needs ", spec.steps,
                                  " steps, cap is ", options.max_steps));
  }
  return spec;
}

// Runs the walk; log weights are evaluated lazily and memoized per cell, so
// repeated samples from one walker are much cheaper than the first.
class GridWalker {
 public:
  explicit GridWalker(GridWalkSpec spec) : spec_(std::move(spec)) {
    const int p = spec_.dimension();
    strides_.resize(p);
    int64_t stride = 1;
    for (int j = 0; j < p; ++j) {
      strides_[j] = stride;
      stride *= spec_.cells[j];
    }
    total_ = stride;
    if (total_ <= kDenseCacheLimit) {
      dense_cache_.assign(static_cast<size_t>(total_),
                          std::numeric_limits<double>::quiet_NaN());
    }
    start_.resize(p);
    for (int j = 0; j < p; ++j) start_[j] = spec_.cells[j] / 2;
  }

  const GridWalkSpec& spec() const { return spec_; }
  int64_t cells_evaluated() const { return evaluated_; }

  Vector CellCenter(const std::vector<int64_t>& index) const {
    Vector c(spec_.dimension());
    for (int j = 0; j < spec_.dimension(); ++j) {
      c(j) = spec_.lower(j) + (static_cast<double>(index[j]) + 0.5) *
                                  spec_.cell_width(j);
    }
    return c;
  }

  int64_t Linear(const std::vector<int64_t>& index) const {
    int64_t lin = 0;
    for (int j = 0; j < spec_.dimension(); ++j) lin += index[j] * strides_[j];
    return lin;
  }

  std::vector<int64_t> Unlinear(int64_t lin) const {
    std::vector<int64_t> index(spec_.dimension());
    for (int j = 0; j < spec_.dimension(); ++j) {
      index[j] = (lin / strides_[j]) % spec_.cells[j];
    }
    return index;
  }

  absl::StatusOr<double> LogWeight(const std::vector<int64_t>& index) {
    return LogWeightAt(Linear(index), index);
  }

  // Runs the chain from the central cell and returns the final cell.
  template <typename URBG>
  absl::StatusOr<std::vector<int64_t>> RunChain(URBG& rng) {
    return RunChainFrom(start_, rng);
  }

  template <typename URBG>
  absl::StatusOr<std::vector<int64_t>> RunChainFrom(
      std::vector<int64_t> index, URBG& rng) {
    const int p = spec_.dimension();
    std::uniform_int_distribution<int> move(0, 4 * p - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int64_t lin = Linear(index);
    DP_ERM_ASSIGN_OR_RETURN(double current, LogWeightAt(lin, index));
    const auto started = std::chrono::steady_clock::now();
    for (int64_t step = 0; step < spec_.steps; ++step) {
      if (spec_.max_seconds.has_value() && (step & 0xFFFFF) == 0xFFFFF) {
        double elapsed = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - started)
                             .count();
        if (elapsed > *spec_.max_seconds) {
          return MakeError(ErrorKind::kBudgetExceeded,
                           "walk exceeded its wall-clock cap");
        }
      }
      int r = move(rng);
      if (r < 2 * p) continue;  // Lazy half.
      r -= 2 * p;
      const int axis = r >> 1;
      const int64_t dir = (r & 1) ? 1 : -1;
      const int64_t moved = index[axis] + dir;
      if (moved < 0 || moved >= spec_.cells[axis]) continue;
      const int64_t next_lin = lin + dir * strides_[axis];
      double proposed;
      if (!dense_cache_.empty() &&
          !std::isnan(dense_cache_[static_cast<size_t>(next_lin)])) {
        proposed = dense_cache_[static_cast<size_t>(next_lin)];
      } else {
        index[axis] = moved;
        absl::StatusOr<double> w = LogWeightAt(next_lin, index);
        index[axis] -= dir;
        if (!w.ok()) return w.status();
        proposed = *w;
      }
      const double diff = proposed - current;
      if (diff >= 0.0 || unit(rng) < std::exp(diff)) {
        index[axis] = moved;
        lin = next_lin;
        current = proposed;
      }
    }
    return index;
  }

  // A uniform point of the cell (cells tile the box exactly).
  template <typename URBG>
  Vector Jitter(const std::vector<int64_t>& index, URBG& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector x(spec_.dimension());
    for (int j = 0; j < spec_.dimension(); ++j) {
      double lo = spec_.lower(j) + static_cast<double>(index[j]) *
                                       spec_.cell_width(j);
      x(j) = std::min(spec_.upper(j), lo + unit(rng) * spec_.cell_width(j));
    }
    return x;
  }

  template <typename URBG>
  absl::StatusOr<Vector> Sample(URBG& rng) {
    DP_ERM_ASSIGN_OR_RETURN(std::vector<int64_t> cell, RunChain(rng));
    return Jitter(cell, rng);
  }

 private:
  static constexpr int64_t kDenseCacheLimit = int64_t{1} << 22;

  absl::StatusOr<double> LogWeightAt(int64_t lin,
                                     const std::vector<int64_t>& index) {
    if (!dense_cache_.empty()) {
      double cached = dense_cache_[static_cast<size_t>(lin)];
      if (!std::isnan(cached)) return cached;
    } else {
      auto it = sparse_cache_.find(lin);
      if (it != sparse_cache_.end()) return it->second;
    }
    DP_ERM_ASSIGN_OR_RETURN(double w, spec_.log_weight(CellCenter(index)));
    if (!std::isfinite(w)) {
      return MakeError(ErrorKind::kInvalidWeight,
                       absl::StrCat("non-finite log-weight ", w));
    }
    ++evaluated_;
    if (!dense_cache_.empty()) {
      dense_cache_[static_cast<size_t>(lin)] = w;
    } else {
      sparse_cache_.emplace(lin, w);
    }
    return w;
  }

  GridWalkSpec spec_;
  std::vector<int64_t> strides_;
  int64_t total_ = 0;
  std::vector<double> dense_cache_;
  std::unordered_map<int64_t, double> sparse_cache_;
  std::vector<int64_t> start_;
  int64_t evaluated_ = 0;
};

template <typename URBG>
absl::StatusOr<Vector> CubeGridWalk(const GridWalkSpec& spec, URBG& rng) {
  GridWalker walker(spec);
  return walker.Sample(rng);
}

// Exact stationary law π(u) ∝ F(u) over all cells (linear index order).
struct StationaryDistribution {
  std::vector<double> pi;
  std::vector<double> log_weight;
};

inline constexpr int64_t kOracleMaxCells = 1000000;
inline constexpr int64_t kDenseMatrixMaxCells = 5000;

inline absl::StatusOr<StationaryDistribution> StationaryOracle(
    const GridWalkSpec& spec) {
  if (spec.total_cells() > kOracleMaxCells) {
    return MakeError(ErrorKind::kOracleTooLarge,
                     absl::StrCat(spec.total_cells(), " cells"));
  }
  GridWalker walker(spec);
  StationaryDistribution out;
  const int64_t total = spec.total_cells();
  out.log_weight.resize(static_cast<size_t>(total));
  double max_log = -std::numeric_limits<double>::infinity();
  for (int64_t lin = 0; lin < total; ++lin) {
    DP_ERM_ASSIGN_OR_RETURN(double w, walker.LogWeight(walker.Unlinear(lin)));
    out.log_weight[static_cast<size_t>(lin)] = w;
    max_log = std::max(max_log, w);
  }
  out.pi.resize(static_cast<size_t>(total));
  double sum = 0.0;
  for (int64_t lin = 0; lin < total; ++lin) {
    double v = std::exp(out.log_weight[static_cast<size_t>(lin)] - max_log);
    out.pi[static_cast<size_t>(lin)] = v;
    sum += v;
  }
  for (double& v : out.pi) v /= sum;
  return out;
}

// Dense transition matrix of the walk (row = current cell).
inline absl::StatusOr<Eigen::MatrixXd> TransitionMatrix(
    const GridWalkSpec& spec) {
  const int64_t total = spec.total_cells();
  if (total > kDenseMatrixMaxCells) {
    return MakeError(ErrorKind::kOracleTooLarge,
                     absl::StrCat(total, " cells for a dense matrix"));
  }
  DP_ERM_ASSIGN_OR_RETURN(StationaryDistribution stat,
                          StationaryOracle(spec));
  GridWalker walker(spec);
  const int p = spec.dimension();
  const double propose = 1.0 / (4.0 * p);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(total, total);
  for (int64_t u = 0; u < total; ++u) {
    std::vector<int64_t> index = walker.Unlinear(u);
    double leave = 0.0;
    for (int axis = 0; axis < p; ++axis) {
      for (int64_t dir : {-1, 1}) {
        int64_t moved = index[axis] + dir;
        if (moved < 0 || moved >= spec.cells[axis]) continue;
        index[axis] = moved;
        int64_t v = walker.Linear(index);
        index[axis] -= dir;
        double diff = stat.log_weight[static_cast<size_t>(v)] -
                      stat.log_weight[static_cast<size_t>(u)];
        double prob = propose * std::min(1.0, std::exp(diff));
        P(u, v) = prob;
        leave += prob;
      }
    }
    P(u, u) = 1.0 - leave;
  }
  return P;
}

// P^t by repeated squaring.
inline Eigen::MatrixXd MatrixPower(const Eigen::MatrixXd& P, int64_t t) {
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(P.rows(), P.cols());
  Eigen::MatrixXd base = P;
  while (t > 0) {
    if (t & 1) result = result * base;
    t >>= 1;
    if (t > 0) base = base * base;
  }
  return result;
}

// max_v |log(row(v)/π(v))|.
inline double DistInf(const Eigen::VectorXd& row,
                      const std::vector<double>& pi) {
  double worst = 0.0;
  for (size_t v = 0; v < pi.size(); ++v) {
    double r = row(static_cast<Eigen::Index>(v));
    if (r <= 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(std::log(r / pi[v])));
  }
  return worst;
}

// Walk on the bounding box of `body` with log F = −f̄ − ψ̄_α,
// α = 3e^{2ε̃}(η‖C‖₂ + p), run at accuracy ε̃/2. Outputs may fall outside
// the body.
class InitSampler {
 public:
  static absl::StatusOr<InitSampler> Create(const ConvexBody& body,
                                            ConvexFunction f, double eta,
                                            double eps_tilde,
                                            const SamplerOptions& options = {}) {
    if (!(eta >= 0.0) || !(eps_tilde > 0.0)) {
      return MakeError(ErrorKind::kInvalidArgument,
                       "need eta >= 0 and eps~ > 0");
    }
    DP_ERM_RETURN_IF_ERROR(CheckIsotropic(body));
    const int p = body.dimension();
    const double alpha =
        3.0 * std::exp(2.0 * eps_tilde) * (eta * body.L2Diameter() + p);
    ConvexBody cube = BoundingCube(body);
    Vector center = cube.oracle().BoxCenter();
    Vector half = cube.oracle().BoxHalfWidths();
    auto shared_f = std::make_shared<ConvexFunction>(std::move(f));
    LogWeightFn log_weight =
        [body, shared_f, eta, alpha](const Vector& x) -> absl::StatusOr<double> {
      double f_bar = 0.0;
      if (eta > 0.0) {
        DP_ERM_ASSIGN_OR_RETURN(
            f_bar, LipschitzExtensionEval(*shared_f, body, eta, x));
      } else {
        f_bar = shared_f->value(body.oracle().Project(x));
      }
      DP_ERM_ASSIGN_OR_RETURN(double penalty, GaugePenalty(body, x, alpha));
      return -f_bar - penalty;
    };
    DP_ERM_ASSIGN_OR_RETURN(
        GridWalkSpec spec,
        MakeGridWalkSpec(center - half, center + half, std::move(log_weight),
                         eta + alpha, eps_tilde / 2.0, options));
    return InitSampler(body, alpha, std::move(spec));
  }

  double alpha() const { return alpha_; }
  const GridWalkSpec& spec() const { return walker_->spec(); }
  GridWalker& walker() { return *walker_; }

  template <typename URBG>
  absl::StatusOr<Vector> Sample(URBG& rng) {
    return walker_->Sample(rng);
  }

 private:
  InitSampler(ConvexBody body, double alpha, GridWalkSpec spec)
      : body_(std::move(body)),
        alpha_(alpha),
        walker_(std::make_shared<GridWalker>(std::move(spec))) {}

  ConvexBody body_;
  double alpha_;
  std::shared_ptr<GridWalker> walker_;
};

template <typename URBG>
absl::StatusOr<Vector> InitSamp(const ConvexBody& body, ConvexFunction f,
                                double eta, double eps_tilde, URBG& rng,
                                const SamplerOptions& options = {}) {
  DP_ERM_ASSIGN_OR_RETURN(
      InitSampler sampler,
      InitSampler::Create(body, std::move(f), eta, eps_tilde, options));
  return sampler.Sample(rng);
}

// m = ⌈4η‖C‖₂ + p log‖C‖₂ + log(1/(1 − e^{−ε̃/4}))⌉, at least 1.
inline int64_t EffSampAttempts(double eta, double diameter, int p,
                               double eps_tilde) {
  double m = 4.0 * eta * diameter + p * std::log(diameter) +
             std::log(1.0 / -std::expm1(-eps_tilde / 4.0));
  return std::max<int64_t>(1, static_cast<int64_t>(std::ceil(m)));
}

struct EffSampleStats {
  int64_t samples = 0;
  int64_t attempts = 0;
  int64_t fallbacks = 0;
};

// Always returns a point of the body.
class EffSampler {
 public:
  static absl::StatusOr<EffSampler> Create(const ConvexBody& body,
                                           ConvexFunction f, double eta,
                                           double eps_tilde,
                                           const SamplerOptions& options = {}) {
    DP_ERM_ASSIGN_OR_RETURN(
        InitSampler init,
        InitSampler::Create(body, std::move(f), eta, eps_tilde / 4.0, options));
    int64_t m = EffSampAttempts(eta, body.L2Diameter(), body.dimension(),
                                eps_tilde);
    return EffSampler(body, std::move(init), m);
  }

  int64_t attempts_cap() const { return m_; }
  const EffSampleStats& stats() const { return stats_; }
  InitSampler& init() { return init_; }

  template <typename URBG>
  absl::StatusOr<Vector> Sample(URBG& rng) {
    ++stats_.samples;
    for (int64_t i = 0; i < m_; ++i) {
      ++stats_.attempts;
      DP_ERM_ASSIGN_OR_RETURN(Vector theta, init_.Sample(rng));
      if (body_.Contains(theta)) return theta;
    }
    ++stats_.fallbacks;
    return UniformBallSample(body_.dimension(), rng);
  }

 private:
  EffSampler(ConvexBody body, InitSampler init, int64_t m)
      : body_(std::move(body)), init_(std::move(init)), m_(m) {}

  ConvexBody body_;
  InitSampler init_;
  int64_t m_;
  EffSampleStats stats_;
};

template <typename URBG>
absl::StatusOr<Vector> EffSamp(const ConvexBody& body, ConvexFunction f,
                               double eta, double eps_tilde, URBG& rng,
                               const SamplerOptions& options = {}) {
  DP_ERM_ASSIGN_OR_RETURN(
      EffSampler sampler,
      EffSampler::Create(body, std::move(f), eta, eps_tilde, options));
  return sampler.Sample(rng);
}

}  // namespace dp_erm

#endif  // DP_ERM_SAMPLER_H_
