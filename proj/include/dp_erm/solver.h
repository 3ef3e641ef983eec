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

// Nonprivate minimization of L(θ;D) over a convex body, used for excess-risk
// measurement and inside the perturbation mechanisms.

#ifndef DP_ERM_SOLVER_H_
#define DP_ERM_SOLVER_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dp_erm/geometry.h"
#include "dp_erm/losses.h"
#include "dp_erm/status.h"

namespace dp_erm {

struct SolverSettings {
  int max_iterations = 1000000;
  // Objective units; defaults to 1e-9·n·L·‖C‖₂.
  std::optional<double> tolerance;
  int stall_window = 200;
};

struct SolverResult {
  Vector theta;
  double value = 0.0;
  bool certified = false;
  int iterations = 0;
  std::string method;
};

// A convex objective on a body. `smoothness` is the gradient-Lipschitz
// constant when the objective is differentiable.
struct Objective {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::optional<double> smoothness;
  // Upper bound on subgradient norms over the body.
  double gradient_bound = 1.0;
};

namespace internal {

// 1-D: bisection on the sign of a subgradient over the interval body.
inline SolverResult MinimizeInterval(const Objective& obj,
                                     const ConvexBody& body) {
  double lo = body.oracle().BoxCenter()(0) - body.oracle().BoxHalfWidths()(0);
  double hi = body.oracle().BoxCenter()(0) + body.oracle().BoxHalfWidths()(0);
  auto at = [](double t) { return Vector::Constant(1, t); };
  SolverResult result;
  result.method = "interval-bisection";
  result.certified = true;
  if (obj.gradient(at(lo))(0) >= 0.0) {
    result.theta = at(lo);
  } else if (obj.gradient(at(hi))(0) <= 0.0) {
    result.theta = at(hi);
  } else {
    int it = 0;
    while (hi - lo > 0.0 && it < 200) {
      ++it;
      double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      double g = obj.gradient(at(mid))(0);
      if (g > 0.0) {
        hi = mid;
      } else if (g < 0.0) {
        lo = mid;
      } else {
        lo = hi = mid;
      }
    }
    result.iterations = it;
    double v_lo = obj.value(at(lo));
    double v_hi = obj.value(at(hi));
    result.theta = at(v_lo <= v_hi ? lo : hi);
  }
  result.value = obj.value(result.theta);
  return result;
}

// Accelerated projected gradient with function-value restarts. Stops on the
// gradient-mapping certificate gap ≤ ‖G‖·D + t‖G‖²/2, or when the best value
// improved by at most the tolerance between iteration k/2 and k (for an
// O(1/k²) tail the remaining gap is then about a third of the tolerance).
inline SolverResult MinimizeSmooth(const Objective& obj, const ConvexBody& body,
                                   const Vector& start, double tolerance,
                                   int max_iterations, int window) {
  const BodyOracle& oracle = body.oracle();
  const double diameter = body.L2Diameter();
  Vector x = oracle.Project(start);
  double step = 0.0;
  if (*obj.smoothness > 0.0) {
    step = 1.0 / *obj.smoothness;
  } else {
    step = diameter / std::max(obj.gradient(x).norm(), 1e-300);
  }
  Vector y = x;
  double fx = obj.value(x);
  double momentum = 1.0;
  SolverResult result;
  result.method = "accelerated-projected-gradient";
  result.theta = x;
  result.value = fx;
  // Best value at every window boundary.
  std::vector<double> checkpoints = {fx};
  for (int it = 1; it <= max_iterations; ++it) {
    Vector next = oracle.Project(y - step * obj.gradient(y));
    double f_next = obj.value(next);
    double mapping = (y - next).norm() / step;
    result.iterations = it;
    if (f_next < result.value) {
      result.value = f_next;
      result.theta = next;
    }
    if (mapping * diameter + 0.5 * step * mapping * mapping <= tolerance) {
      result.certified = true;
      break;
    }
    if (it % window == 0) {
      checkpoints.push_back(result.value);
      const size_t j = checkpoints.size() - 1;
      if (j >= 2 && checkpoints[j / 2] - result.value <= tolerance) {
        result.certified = true;
        break;
      }
    }
    if (f_next > fx) {
      // Restart momentum.
      momentum = 1.0;
      y = x;
      continue;
    }
    double next_momentum =
        0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = next + ((momentum - 1.0) / next_momentum) * (next - x);
    momentum = next_momentum;
    x = std::move(next);
    fx = f_next;
  }
  return result;
}

// Normalized projected subgradient steps of constant length, halved whenever
// the best value stalls over a window; certified once the step length times
// the gradient bound drops below the tolerance.
inline SolverResult MinimizeNonsmooth(const Objective& obj,
                                      const ConvexBody& body,
                                      const Vector& start, double tolerance,
                                      int max_iterations, int window) {
  const BodyOracle& oracle = body.oracle();
  Vector x = oracle.Project(start);
  SolverResult result;
  result.method = "projected-subgradient";
  result.theta = x;
  result.value = obj.value(x);
  double step = 0.5 * body.L2Diameter();
  double window_best = result.value;
  int in_window = 0;
  for (int it = 1; it <= max_iterations; ++it) {
    result.iterations = it;
    Vector g = obj.gradient(x);
    double norm = g.norm();
    if (norm == 0.0) {
      double v = obj.value(x);
      if (v <= result.value) {
        result.value = v;
        result.theta = x;
      }
      result.certified = true;
      break;
    }
    x = oracle.Project(x - (step / norm) * g);
    double v = obj.value(x);
    if (v < result.value) {
      result.value = v;
      result.theta = x;
    }
    if (++in_window >= window) {
      if (window_best - result.value <= tolerance) {
        if (step * obj.gradient_bound <= tolerance) {
          result.certified = true;
          break;
        }
        step *= 0.5;
        x = result.theta;
      }
      window_best = result.value;
      in_window = 0;
    }
  }
  return result;
}

}  // namespace internal

inline absl::StatusOr<SolverResult> MinimizeObjective(
    const Objective& obj, const ConvexBody& body, double tolerance,
    const SolverSettings& settings = {},
    std::optional<Vector> start = std::nullopt) {
  if (!(tolerance > 0.0) || settings.max_iterations < 1) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "need tolerance > 0 and max_iterations >= 1");
  }
  Vector x0 = start.has_value() ? *start : Vector::Zero(body.dimension());
  SolverResult result;
  if (body.dimension() == 1) {
    result = internal::MinimizeInterval(obj, body);
  } else if (obj.smoothness.has_value()) {
    result = internal::MinimizeSmooth(obj, body, x0, tolerance,
                                      settings.max_iterations,
                                      settings.stall_window);
  } else {
    result = internal::MinimizeNonsmooth(obj, body, x0, tolerance,
                                         settings.max_iterations,
                                         settings.stall_window);
  }
  if (!result.theta.allFinite() || !std::isfinite(result.value)) {
    return MakeError(ErrorKind::kNumericalFailure, "solver diverged");
  }
  return result;
}

inline double DefaultSolverTolerance(const LossFunction& loss, int n,
                                     const ConvexBody& body) {
  return 1e-9 * n * loss.lipschitz * body.L2Diameter();
}

// Total loss plus (reg/2)‖θ‖² + ⟨linear, θ⟩.
inline Objective MakeObjective(const LossFunction& loss, const Dataset& data,
                               double reg = 0.0,
                               std::optional<Vector> linear = std::nullopt,
                               double body_radius = 0.0) {
  Objective obj;
  Vector b = linear.has_value() ? *linear : Vector::Zero(data.dimension());
  obj.value = [&loss, &data, reg, b](const Vector& theta) {
    return internal::SumLoss(loss, theta, data) +
           0.5 * reg * theta.squaredNorm() + b.dot(theta);
  };
  obj.gradient = [&loss, &data, reg, b](const Vector& theta) {
    Vector g = internal::SumSubgradient(loss, theta, data);
    g += reg * theta + b;
    return g;
  };
  if (loss.smoothness.has_value()) {
    obj.smoothness = data.size() * *loss.smoothness + reg;
  }
  obj.gradient_bound =
      data.size() * loss.subgradient_bound + reg * body_radius + b.norm();
  return obj;
}

inline double BodyRadius(const ConvexBody& body) {
  Vector c = body.oracle().BoxCenter();
  Vector w = body.oracle().BoxHalfWidths();
  return c.cwiseAbs().norm() + w.norm();
}

// θ* = argmin over the body of L(θ;D).
inline absl::StatusOr<SolverResult> Minimize(const LossFunction& loss,
                                             const Dataset& data,
                                             const ConvexBody& body,
                                             const SolverSettings& settings =
                                                 {}) {
  DP_ERM_RETURN_IF_ERROR(
      CheckDataset(loss, Vector::Zero(body.dimension()), data));
  double tolerance = settings.tolerance.value_or(
      DefaultSolverTolerance(loss, data.size(), body));
  Objective obj = MakeObjective(loss, data, 0.0, std::nullopt,
                                BodyRadius(body));
  return MinimizeObjective(obj, body, tolerance, settings);
}

// Excess risk against a known optimum value: floored at −tol and clamped to
// 0 within tol of 0.
inline double ClampExcess(double excess, double tolerance) {
  excess = std::max(excess, -tolerance);
  if (std::abs(excess) <= tolerance) return 0.0;
  return excess;
}

inline absl::StatusOr<double> ExcessRisk(const Vector& theta,
                                         const LossFunction& loss,
                                         const Dataset& data,
                                         const ConvexBody& body,
                                         const SolverSettings& settings = {}) {
  DP_ERM_RETURN_IF_ERROR(CheckVector(body, theta));
  if (!body.Contains(theta)) {
    return MakeError(ErrorKind::kInvalidArgument, "theta is not in the body");
  }
  DP_ERM_ASSIGN_OR_RETURN(SolverResult opt,
                          Minimize(loss, data, body, settings));
  double tolerance = settings.tolerance.value_or(
      DefaultSolverTolerance(loss, data.size(), body));
  return ClampExcess(internal::SumLoss(loss, theta, data) - opt.value,
                     tolerance);
}

}  // namespace dp_erm

#endif  // DP_ERM_SOLVER_H_
