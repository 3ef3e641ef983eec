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

#ifndef DP_ERM_LOSSES_H_
#define DP_ERM_LOSSES_H_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_split.h"
#include "absl/strings/strip.h"
#include "dp_erm/geometry.h"
#include "dp_erm/status.h"

namespace dp_erm {

struct Record {
  Vector x;
  // Label or regression target; meaningful only when has_label is set.
  double y = 0.0;
  bool has_label = false;
};

struct Dataset {
  std::vector<Record> records;

  int size() const { return static_cast<int>(records.size()); }
  int dimension() const {
    return records.empty() ? 0 : static_cast<int>(records.front().x.size());
  }
};

// Per-example convex loss with declared constants.
//
// `lipschitz` is the constant L used by every privacy calibration. For all
// losses but squared-distance it bounds ‖∂ℓ(θ;d)‖ on the declared body. The
// squared-distance loss declares the smaller sensitivity-equivalent constant
// (gradient differences between records are bounded by 2L), and
// `subgradient_bound` then carries the actual norm bound used for geometric
// Lipschitz requirements.
struct LossFunction {
  std::string name;
  std::function<double(const Vector&, const Record&)> value;
  // Adds scale * (subgradient at θ) to *out.
  std::function<void(const Vector&, const Record&, double, Vector*)>
      add_subgradient;
  double lipschitz = 1.0;
  double strong_convexity = 0.0;
  std::optional<double> smoothness;
  double subgradient_bound = 1.0;
  bool needs_label = false;
};

enum class HingeForm {
  // z = 1 − y⟨θ, x⟩ (classification margin).
  kMargin,
  // z = y − ⟨θ, x⟩ (one-sided residual).
  kResidual,
};

namespace internal {

inline double HingeArgument(HingeForm form, const Vector& theta,
                            const Record& d) {
  return form == HingeForm::kMargin ? 1.0 - d.y * theta.dot(d.x)
                                    : d.y - theta.dot(d.x);
}

// dz/dθ.
inline double HingeArgumentScale(HingeForm form, const Record& d) {
  return form == HingeForm::kMargin ? -d.y : -1.0;
}

}  // namespace internal

// Huberized (z)₊: equal to (z)₊ outside [−h, h], quadratic inside.
inline double HuberizedPositivePart(double z, double h) {
  if (z > h) return z;
  if (z < -h) return 0.0;
  return z * z / (4.0 * h) + z / 2.0 + h / 4.0;
}

inline double HuberizedPositivePartDerivative(double z, double h) {
  if (z > h) return 1.0;
  if (z < -h) return 0.0;
  return z / (2.0 * h) + 0.5;
}

// ℓ(θ;d) = −⟨θ, x⟩. `max_feature_norm` bounds ‖x‖ over the universe.
inline LossFunction LinearLoss(double max_feature_norm = 1.0) {
  LossFunction loss;
  loss.name = "linear";
  loss.value = [](const Vector& theta, const Record& d) {
    return -theta.dot(d.x);
  };
  loss.add_subgradient = [](const Vector&, const Record& d, double scale,
                            Vector* out) { *out -= scale * d.x; };
  loss.lipschitz = max_feature_norm;
  loss.smoothness = 0.0;
  loss.subgradient_bound = max_feature_norm;
  return loss;
}

// ℓ(θ;d) = ½‖θ − x‖². Declares L = max‖x‖, Δ = β = 1; the norm bound is
// body_radius + max‖x‖.
inline LossFunction SquaredDistanceLoss(double max_feature_norm = 1.0,
                                        double body_radius = 1.0) {
  LossFunction loss;
  loss.name = "squared";
  loss.value = [](const Vector& theta, const Record& d) {
    return 0.5 * (theta - d.x).squaredNorm();
  };
  loss.add_subgradient = [](const Vector& theta, const Record& d, double scale,
                            Vector* out) { *out += scale * (theta - d.x); };
  loss.lipschitz = max_feature_norm;
  loss.strong_convexity = 1.0;
  loss.smoothness = 1.0;
  loss.subgradient_bound = body_radius + max_feature_norm;
  return loss;
}

// (z)₊ with z from `form`. At the kink the subgradient is 0.
inline LossFunction HingeLoss(double max_feature_norm = 1.0,
                              HingeForm form = HingeForm::kMargin) {
  LossFunction loss;
  loss.name = form == HingeForm::kMargin ? "hinge" : "hinge-residual";
  loss.value = [form](const Vector& theta, const Record& d) {
    return std::max(0.0, internal::HingeArgument(form, theta, d));
  };
  loss.add_subgradient = [form](const Vector& theta, const Record& d,
                                double scale, Vector* out) {
    if (internal::HingeArgument(form, theta, d) > 0.0) {
      *out += (scale * internal::HingeArgumentScale(form, d)) * d.x;
    }
  };
  loss.lipschitz = max_feature_norm;
  loss.subgradient_bound = max_feature_norm;
  loss.needs_label = true;
  return loss;
}

// Huberized hinge; smoothness ‖x‖²/(2h).
inline LossFunction HuberizedHingeLoss(double h, double max_feature_norm = 1.0,
                                       HingeForm form = HingeForm::kMargin) {
  LossFunction loss;
  loss.name = form == HingeForm::kMargin ? "huber-hinge" : "huber-residual";
  loss.value = [form, h](const Vector& theta, const Record& d) {
    return HuberizedPositivePart(internal::HingeArgument(form, theta, d), h);
  };
  loss.add_subgradient = [form, h](const Vector& theta, const Record& d,
                                   double scale, Vector* out) {
    double slope = HuberizedPositivePartDerivative(
        internal::HingeArgument(form, theta, d), h);
    if (slope != 0.0) {
      *out += (scale * slope * internal::HingeArgumentScale(form, d)) * d.x;
    }
  };
  loss.lipschitz = max_feature_norm;
  loss.smoothness = max_feature_norm * max_feature_norm / (2.0 * h);
  loss.subgradient_bound = max_feature_norm;
  loss.needs_label = true;
  return loss;
}

// ℓ(θ;d) = ‖θ − x‖; subgradient 0 at θ = x.
inline LossFunction EuclideanMedianLoss() {
  LossFunction loss;
  loss.name = "median";
  loss.value = [](const Vector& theta, const Record& d) {
    return (theta - d.x).norm();
  };
  loss.add_subgradient = [](const Vector& theta, const Record& d, double scale,
                            Vector* out) {
    Vector diff = theta - d.x;
    double norm = diff.norm();
    if (norm > 0.0) *out += (scale / norm) * diff;
  };
  loss.lipschitz = 1.0;
  loss.subgradient_bound = 1.0;
  return loss;
}

// ℓ̃(θ;d) = ℓ(θ;d) + (Δ'/2n')‖θ‖². The constants grow by the regularizer's
// contribution on a body of the given radius.
inline LossFunction RegularizedLoss(LossFunction base, double delta_reg,
                                    int n_reg, double body_radius) {
  const double c = delta_reg / n_reg;
  LossFunction loss;
  loss.name = absl::StrCat(base.name, "+reg");
  auto base_value = base.value;
  auto base_grad = base.add_subgradient;
  loss.value = [base_value, c](const Vector& theta, const Record& d) {
    return base_value(theta, d) + 0.5 * c * theta.squaredNorm();
  };
  loss.add_subgradient = [base_grad, c](const Vector& theta, const Record& d,
                                        double scale, Vector* out) {
    base_grad(theta, d, scale, out);
    *out += (scale * c) * theta;
  };
  loss.lipschitz = base.lipschitz + c * body_radius;
  loss.strong_convexity = base.strong_convexity + c;
  if (base.smoothness.has_value()) loss.smoothness = *base.smoothness + c;
  loss.subgradient_bound = base.subgradient_bound + c * body_radius;
  loss.needs_label = base.needs_label;
  return loss;
}

inline absl::Status CheckRecord(const LossFunction& loss, const Vector& theta,
                                const Record& d) {
  if (theta.size() != d.x.size()) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("dimension mismatch: θ has ", theta.size(),
                                  ", record has ", d.x.size()));
  }
  if (loss.needs_label && !d.has_label) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat(loss.name, " needs labelled records"));
  }
  return absl::OkStatus();
}

inline absl::Status CheckDataset(const LossFunction& loss, const Vector& theta,
                                 const Dataset& data) {
  if (data.records.empty()) {
    return MakeError(ErrorKind::kInvalidArgument, "empty dataset");
  }
  for (const Record& d : data.records) {
    DP_ERM_RETURN_IF_ERROR(CheckRecord(loss, theta, d));
  }
  return absl::OkStatus();
}

inline absl::StatusOr<double> LossEval(const LossFunction& loss,
                                       const Vector& theta, const Record& d) {
  DP_ERM_RETURN_IF_ERROR(CheckRecord(loss, theta, d));
  return loss.value(theta, d);
}

inline absl::StatusOr<Vector> LossSubgradient(const LossFunction& loss,
                                              const Vector& theta,
                                              const Record& d) {
  DP_ERM_RETURN_IF_ERROR(CheckRecord(loss, theta, d));
  Vector g = Vector::Zero(theta.size());
  loss.add_subgradient(theta, d, 1.0, &g);
  return g;
}

namespace internal {

// Unchecked sums for hot loops; callers validate once up front.
inline double SumLoss(const LossFunction& loss, const Vector& theta,
                      const Dataset& data) {
  double total = 0.0;
  for (const Record& d : data.records) total += loss.value(theta, d);
  return total;
}

inline Vector SumSubgradient(const LossFunction& loss, const Vector& theta,
                             const Dataset& data) {
  Vector g = Vector::Zero(theta.size());
  for (const Record& d : data.records) loss.add_subgradient(theta, d, 1.0, &g);
  return g;
}

}  // namespace internal

// L(θ;D) = Σ ℓ(θ;d_i).
inline absl::StatusOr<double> TotalLoss(const LossFunction& loss,
                                        const Vector& theta,
                                        const Dataset& data) {
  DP_ERM_RETURN_IF_ERROR(CheckDataset(loss, theta, data));
  return internal::SumLoss(loss, theta, data);
}

inline absl::StatusOr<Vector> TotalSubgradient(const LossFunction& loss,
                                               const Vector& theta,
                                               const Dataset& data) {
  DP_ERM_RETURN_IF_ERROR(CheckDataset(loss, theta, data));
  return internal::SumSubgradient(loss, theta, data);
}

// A convex function given by value and subgradient oracles.
struct ConvexFunction {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> subgradient;
};

inline ConvexFunction ScaledTotalLoss(const LossFunction& loss,
                                      const Dataset& data, double scale) {
  // Copies keep the function valid independently of the caller's objects.
  return ConvexFunction{
      [loss, data, scale](const Vector& theta) {
        return scale * internal::SumLoss(loss, theta, data);
      },
      [loss, data, scale](const Vector& theta) {
        Vector g = Vector::Zero(theta.size());
        for (const Record& d : data.records) {
          loss.add_subgradient(theta, d, scale, &g);
        }
        return g;
      }};
}

struct ExtensionSettings {
  int max_iterations = 5000;
  // Additive tolerance is tolerance_scale * (1 + |f̄|).
  double tolerance_scale = 1e-6;
  int stall_window = 200;
};

// f̄(x) = min_{y∈C} f(y) + η‖x − y‖, the convex η-Lipschitz extension of f.
//
// Inside C this is f itself. Outside, the inner problem is solved by
// projected gradient steps with backtracking, warm-started at Π_C(x). When a
// step cannot satisfy the descent test (a kink of f) the solver switches to
// c/√t subgradient steps and stops once the best value stalls.
inline absl::StatusOr<double> LipschitzExtensionEval(
    const ConvexFunction& f, const ConvexBody& body, double eta,
    const Vector& x, const ExtensionSettings& settings = {}) {
  DP_ERM_RETURN_IF_ERROR(CheckVector(body, x));
  if (!(eta > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "eta must be positive");
  }
  const BodyOracle& oracle = body.oracle();
  if (oracle.Contains(x)) return f.value(x);

  const double diameter = body.L2Diameter();
  auto phi = [&](const Vector& y) { return f.value(y) + eta * (x - y).norm(); };
  auto grad = [&](const Vector& y) {
    Vector g = f.subgradient(y);
    Vector diff = y - x;
    double norm = diff.norm();
    if (norm > 0.0) g += (eta / norm) * diff;
    return g;
  };
  auto tolerance = [&](double value) {
    return settings.tolerance_scale * (1.0 + std::abs(value));
  };

  Vector y = oracle.Project(x);
  double current = phi(y);
  double best = current;
  Vector g = grad(y);
  double step = diameter / std::max(g.norm(), 1e-300);
  bool smooth_phase = true;
  int since_improvement = 0;
  double window_start_best = best;

  for (int it = 1; it <= settings.max_iterations; ++it) {
    if (smooth_phase) {
      bool accepted = false;
      Vector next;
      double next_value = 0.0;
      for (int halvings = 0; halvings < 60; ++halvings) {
        next = oracle.Project(y - step * g);
        next_value = phi(next);
        Vector move = next - y;
        if (next_value <= current + g.dot(move) +
                              move.squaredNorm() / (2.0 * step) + 1e-15) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        smooth_phase = false;
        step = diameter;
        continue;
      }
      double mapping_norm = (y - next).norm() / step;
      y = std::move(next);
      current = next_value;
      best = std::min(best, current);
      // Certified gap for an accepted projected step.
      double gap = mapping_norm * diameter +
                   0.5 * step * mapping_norm * mapping_norm;
      if (gap <= tolerance(best)) return best;
      g = grad(y);
      step *= 1.5;
    } else {
      // Normalized subgradient steps diameter/(4√t) from the current point.
      double norm = g.norm();
      if (norm == 0.0) return best;
      double t_step = diameter / (4.0 * std::sqrt(static_cast<double>(it)));
      y = oracle.Project(y - (t_step / norm) * g);
      current = phi(y);
      if (current < best) best = current;
      g = grad(y);
      if (++since_improvement >= settings.stall_window) {
        if (window_start_best - best <= tolerance(best)) return best;
        window_start_best = best;
        since_improvement = 0;
      }
    }
  }
  return MakeError(
      ErrorKind::kNumericalFailure,
      absl::StrCat("extension solver did not converge in ",
                   settings.max_iterations, " iterations; best value ", best,
                   " at distance ", (x - oracle.Project(x)).norm(),
                   " from the body"));
}

// Dataset CSV: one record per line, comma-separated floats; with
// `with_label` the last column is a ±1 label. Blank lines and lines starting
// with '#' are skipped.
inline absl::StatusOr<Dataset> ParseDatasetCsv(std::istream& in,
                                               bool with_label) {
  Dataset data;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    absl::string_view view = absl::StripAsciiWhitespace(line);
    if (view.empty() || view.front() == '#') continue;
    std::vector<absl::string_view> fields = absl::StrSplit(view, ',');
    std::vector<double> values;
    values.reserve(fields.size());
    for (absl::string_view field : fields) {
      double v = 0.0;
      if (!absl::SimpleAtod(absl::StripAsciiWhitespace(field), &v) ||
          !std::isfinite(v)) {
        return MakeError(ErrorKind::kInvalidArgument,
                         absl::StrCat("line ", line_number,
                                      ": not a finite number: '", field, "'"));
      }
      values.push_back(v);
    }
    Record record;
    size_t features = values.size();
    if (with_label) {
      if (values.size() < 2) {
        return MakeError(ErrorKind::kInvalidArgument,
                         absl::StrCat("line ", line_number,
                                      ": need features and a label"));
      }
      double label = values.back();
      if (label != 1.0 && label != -1.0) {
        return MakeError(ErrorKind::kInvalidArgument,
                         absl::StrCat("line ", line_number,
                                      ": label must be -1 or +1"));
      }
      record.y = label;
      record.has_label = true;
      --features;
    }
    record.x = Eigen::Map<Vector>(values.data(),
                                  static_cast<Eigen::Index>(features));
    if (!data.records.empty() &&
        record.x.size() != data.records.front().x.size()) {
      return MakeError(ErrorKind::kInvalidArgument,
                       absl::StrCat("line ", line_number,
                                    ": inconsistent feature count"));
    }
    data.records.push_back(std::move(record));
  }
  if (data.records.empty()) {
    return MakeError(ErrorKind::kInvalidArgument, "no records");
  }
  return data;
}

inline absl::StatusOr<Dataset> ReadDatasetCsv(const std::string& path,
                                              bool with_label) {
  std::ifstream in(path);
  if (!in) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("cannot open ", path));
  }
  return ParseDatasetCsv(in, with_label);
}

inline void WriteDatasetCsv(const Dataset& data, std::ostream& out) {
  for (const Record& d : data.records) {
    for (int j = 0; j < d.x.size(); ++j) {
      if (j > 0) out << ',';
      out << absl::StrFormat("%.17g", d.x(j));
    }
    if (d.has_label) out << absl::StrFormat(",%.17g", d.y);
    out << '\n';
  }
}

}  // namespace dp_erm

#endif  // DP_ERM_LOSSES_H_
