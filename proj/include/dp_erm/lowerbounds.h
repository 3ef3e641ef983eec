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

// Hard-instance generators: packing families of ±1/√p vectors, linear and
// quadratic instances built from them, and the 1-D huberization datasets.

#ifndef DP_ERM_LOWERBOUNDS_H_
#define DP_ERM_LOWERBOUNDS_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dp_erm/geometry.h"
#include "dp_erm/losses.h"
#include "dp_erm/status.h"

namespace dp_erm {

inline constexpr int64_t kMaxPackingSize = int64_t{1} << 16;
inline constexpr double kPackingMinDistance = 1.0 / 8.0;

struct PackingFamily {
  int p = 0;
  std::vector<Vector> points;
  double min_distance = 0.0;
  int64_t rejections = 0;
};

template <typename URBG>
Vector RandomSignVector(int p, URBG& rng) {
  std::bernoulli_distribution coin(0.5);
  const double c = 1.0 / std::sqrt(static_cast<double>(p));
  Vector v(p);
  for (int j = 0; j < p; ++j) v(j) = coin(rng) ? c : -c;
  return v;
}

// K random points of {±1/√p}^p with pairwise distance ≥ 1/8.
template <typename URBG>
absl::StatusOr<PackingFamily> PackingPoints(int p, int64_t k, URBG& rng) {
  if (p < 1 || k < 1) {
    return MakeError(ErrorKind::kInvalidArgument, "need p >= 1 and K >= 1");
  }
  if (k > kMaxPackingSize ||
      std::log2(static_cast<double>(k)) > p / 2.0 + 1e-12) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("K=", k, " exceeds min(2^(p/2), 2^16)"));
  }
  PackingFamily family;
  family.p = p;
  family.min_distance = std::numeric_limits<double>::infinity();
  const double budget = 1e3 * static_cast<double>(k) * static_cast<double>(k);
  double comparisons = 0.0;
  while (static_cast<int64_t>(family.points.size()) < k) {
    Vector candidate = RandomSignVector(p, rng);
    double closest = std::numeric_limits<double>::infinity();
    for (const Vector& q : family.points) {
      closest = std::min(closest, (q - candidate).norm());
      comparisons += 1.0;
    }
    if (closest >= kPackingMinDistance) {
      family.min_distance = std::min(family.min_distance, closest);
      family.points.push_back(std::move(candidate));
    } else {
      ++family.rejections;
    }
    if (comparisons > budget) {
      return MakeError(ErrorKind::kPackingFailure,
                       absl::StrCat("could not place ", k, " points in p=", p,
                                    "; try a smaller K"));
    }
  }
  return family;
}

inline int64_t DefaultPackingSize(int p) {
  return p >= 12 ? 64
                 : std::min<int64_t>(
                       64, static_cast<int64_t>(std::floor(std::pow(2.0, p / 2.0))));
}

// n* = max(1, ⌈p/(20ε)⌉).
inline int64_t PaddingThreshold(int p, double epsilon) {
  return std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(p / (20.0 * epsilon))));
}

enum class FillerChoice { kAllPlus, kRandom };

struct HardInstance {
  Dataset data;
  LossFunction loss;
  ConvexBody body = *ConvexBody::Ball(1, 1.0);
  Vector theta_star;
  // min(n, n*) by construction.
  double m = 0.0;
  // ‖Σ dᵢ‖, within [m − 1, m + 1].
  double sum_norm = 0.0;
  bool padded = false;
  int64_t member = 0;
};

struct InstanceOptions {
  int64_t family_size = 0;  // 0: DefaultPackingSize(p)
  FillerChoice filler = FillerChoice::kAllPlus;
};

namespace internal {

template <typename URBG>
absl::StatusOr<HardInstance> PackedDataset(int64_t n, int p, double epsilon,
                                           const InstanceOptions& options,
                                           URBG& rng) {
  if (n < 1 || p < 1 || !(epsilon > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "need n, p >= 1 and epsilon > 0");
  }
  int64_t k = options.family_size > 0 ? options.family_size
                                      : DefaultPackingSize(p);
  DP_ERM_ASSIGN_OR_RETURN(PackingFamily family, PackingPoints(p, k, rng));
  std::uniform_int_distribution<int64_t> pick(0, k - 1);
  HardInstance inst;
  inst.member = pick(rng);
  const Vector& d = family.points[inst.member];
  const int64_t n_star = PaddingThreshold(p, epsilon);
  Vector filler = options.filler == FillerChoice::kAllPlus
                      ? Vector::Constant(p, 1.0 / std::sqrt(p))
                      : RandomSignVector(p, rng);
  auto add = [&](const Vector& x, int64_t copies) {
    for (int64_t i = 0; i < copies; ++i) {
      inst.data.records.push_back(Record{x, 0.0, false});
    }
  };
  if (n <= n_star) {
    add(d, n);
    inst.m = static_cast<double>(n);
  } else {
    inst.padded = true;
    add(d, n_star);
    add(filler, (n - n_star + 1) / 2);
    add(-filler, (n - n_star) / 2);
    inst.m = static_cast<double>(n_star);
  }
  Vector sum = Vector::Zero(p);
  for (const Record& r : inst.data.records) sum += r.x;
  inst.sum_norm = sum.norm();
  DP_ERM_ASSIGN_OR_RETURN(inst.body, ConvexBody::Ball(p, 1.0));
  inst.theta_star = sum;
  return inst;
}

}  // namespace internal

// Linear loss on the unit ball; θ* = Σdᵢ/‖Σdᵢ‖.
template <typename URBG>
absl::StatusOr<HardInstance> LinearInstance(int64_t n, int p, double epsilon,
                                            URBG& rng,
                                            const InstanceOptions& options =
                                                {}) {
  DP_ERM_ASSIGN_OR_RETURN(HardInstance inst,
                          internal::PackedDataset(n, p, epsilon, options, rng));
  inst.loss = LinearLoss(1.0);
  if (inst.sum_norm > 0.0) inst.theta_star /= inst.sum_norm;
  return inst;
}

// Squared-distance loss on the unit ball; θ* = q(D).
template <typename URBG>
absl::StatusOr<HardInstance> QuadraticInstance(int64_t n, int p,
                                               double epsilon, URBG& rng,
                                               const InstanceOptions& options =
                                                   {}) {
  DP_ERM_ASSIGN_OR_RETURN(HardInstance inst,
                          internal::PackedDataset(n, p, epsilon, options, rng));
  inst.loss = SquaredDistanceLoss(1.0, 1.0);
  inst.theta_star /= static_cast<double>(n);
  return inst;
}

// q(D) = (1/n) Σ dᵢ.
inline Vector MarginalQuery(const Dataset& data) {
  Vector sum = Vector::Zero(data.dimension());
  for (const Record& r : data.records) sum += r.x;
  return sum / static_cast<double>(data.size());
}

inline absl::StatusOr<double> MarginalError(const Vector& estimate,
                                            const Dataset& data) {
  if (data.size() < 1 || estimate.size() != data.dimension()) {
    return MakeError(ErrorKind::kInvalidArgument,
                     "empty dataset or dimension mismatch");
  }
  return (estimate - MarginalQuery(data)).norm();
}

// 1-D datasets (x, y) on the body [−2, 2].
struct HuberizationPair {
  Dataset d1;
  Dataset d2;
  // Rounded counts of (x=−1, y=1) records.
  int64_t d1_negative = 0;
  int64_t d2_negative = 0;
};

// D₁: round(n/3) × (−1, 1) and the rest (1, −1).
// D₂: max(round(n/2 − 1/(32h)), 0) × (−1, 1) and the rest (1, 1).
inline absl::StatusOr<HuberizationPair> HuberizationInstances(int64_t n,
                                                              double h) {
  if (n < 1 || !(h > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "need n >= 1 and h > 0");
  }
  auto record = [](double x, double y) {
    return Record{Vector::Constant(1, x), y, true};
  };
  HuberizationPair out;
  out.d1_negative = std::llround(static_cast<double>(n) / 3.0);
  for (int64_t i = 0; i < n; ++i) {
    out.d1.records.push_back(i < out.d1_negative ? record(-1.0, 1.0)
                                                 : record(1.0, -1.0));
  }
  out.d2_negative = std::max<int64_t>(
      0, std::llround(static_cast<double>(n) / 2.0 - 1.0 / (32.0 * h)));
  out.d2_negative = std::min(out.d2_negative, n);
  for (int64_t i = 0; i < n; ++i) {
    out.d2.records.push_back(i < out.d2_negative ? record(-1.0, 1.0)
                                                 : record(1.0, 1.0));
  }
  return out;
}

inline ConvexBody HuberizationBody() {
  return *ConvexBody::Box(Vector::Constant(1, 2.0));
}

}  // namespace dp_erm

#endif  // DP_ERM_LOWERBOUNDS_H_
