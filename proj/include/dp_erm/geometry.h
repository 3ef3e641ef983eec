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

// Convex bodies: membership, Euclidean projection, Minkowski gauge, bounding
// boxes and ball intersections.

#ifndef DP_ERM_GEOMETRY_H_
#define DP_ERM_GEOMETRY_H_

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dp_erm/status.h"

namespace dp_erm {

using Vector = Eigen::VectorXd;

inline constexpr double kMembershipTolerance = 1e-9;
inline constexpr int kDykstraMaxSweeps = 10000;
inline constexpr double kDykstraTolerance = 1e-10;
inline constexpr double kGaugeBisectionTolerance = 1e-10;

inline bool AllFinite(const Vector& v) { return v.allFinite(); }

// Plug-in interface for convex bodies. Implementations must be immutable.
class BodyOracle {
 public:
  virtual ~BodyOracle() = default;

  virtual int dimension() const = 0;
  // Membership with absolute tolerance kMembershipTolerance.
  virtual bool Contains(const Vector& x) const = 0;
  virtual Vector Project(const Vector& x) const = 0;
  // An upper bound on the Euclidean diameter (exact for balls and boxes).
  virtual double L2Diameter() const = 0;
  // Axis-aligned bounding box.
  virtual Vector BoxCenter() const = 0;
  virtual Vector BoxHalfWidths() const = 0;
  virtual std::string Describe() const = 0;

  // Minkowski gauge with respect to the origin. The default bisects on the
  // scale factor using Contains; the origin must be interior.
  virtual double Gauge(const Vector& x) const {
    double norm = x.norm();
    if (norm == 0.0) return 0.0;
    double hi = 1.0;
    while (!Contains(x / hi)) {
      hi *= 2.0;
      if (hi > 1e300) return std::numeric_limits<double>::infinity();
    }
    double lo = 0.0;
    if (hi == 1.0) {
      lo = 0.0;
    } else {
      lo = hi / 2.0;
    }
    while (hi - lo > kGaugeBisectionTolerance * std::max(1.0, hi)) {
      double mid = 0.5 * (lo + hi);
      if (mid <= 0.0) break;
      if (Contains(x / mid)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return hi;
  }

  // Radius of the largest Euclidean ball centered at c contained in the
  // body (0 if c is outside). The default bisects along the 2p axis
  // directions, which is exact for boxes and balls but only an upper bound
  // for general bodies.
  virtual double InscribedRadius(const Vector& c) const {
    if (!Contains(c)) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    Vector half = BoxHalfWidths();
    for (int j = 0; j < dimension(); ++j) {
      for (double sign : {-1.0, 1.0}) {
        double lo = 0.0;
        double hi = 2.0 * half(j) + 1.0;
        for (int it = 0; it < 100; ++it) {
          double mid = 0.5 * (lo + hi);
          Vector probe = c;
          probe(j) += sign * mid;
          if (Contains(probe)) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        best = std::min(best, lo);
      }
    }
    return best;
  }
};

namespace internal {

class BallOracle final : public BodyOracle {
 public:
  BallOracle(Vector center, double radius)
      : center_(std::move(center)), radius_(radius) {}

  int dimension() const override { return static_cast<int>(center_.size()); }
  bool Contains(const Vector& x) const override {
    return (x - center_).norm() <= radius_ + kMembershipTolerance;
  }
  Vector Project(const Vector& x) const override {
    Vector diff = x - center_;
    double norm = diff.norm();
    if (norm <= radius_) return x;
    return center_ + diff * (radius_ / norm);
  }
  double L2Diameter() const override { return 2.0 * radius_; }
  Vector BoxCenter() const override { return center_; }
  Vector BoxHalfWidths() const override {
    return Vector::Constant(center_.size(), radius_);
  }
  std::string Describe() const override {
    return absl::StrCat("ball(radius=", radius_, ")");
  }
  double Gauge(const Vector& x) const override {
    double xx = x.squaredNorm();
    if (xx == 0.0) return 0.0;
    if (center_.isZero(0.0)) return std::sqrt(xx) / radius_;
    // Positive root s of |s x - c| = r; the gauge is 1/s.
    double xc = x.dot(center_);
    double cc = center_.squaredNorm() - radius_ * radius_;
    double s = (xc + std::sqrt(xc * xc - xx * cc)) / xx;
    return 1.0 / s;
  }
  double InscribedRadius(const Vector& c) const override {
    return std::max(0.0, radius_ - (c - center_).norm());
  }

  const Vector& center() const { return center_; }
  double radius() const { return radius_; }

 private:
  Vector center_;
  double radius_;
};

class BoxOracle final : public BodyOracle {
 public:
  BoxOracle(Vector center, Vector half_widths)
      : center_(std::move(center)), half_(std::move(half_widths)) {}

  int dimension() const override { return static_cast<int>(half_.size()); }
  bool Contains(const Vector& x) const override {
    for (int j = 0; j < half_.size(); ++j) {
      if (std::abs(x(j) - center_(j)) > half_(j) + kMembershipTolerance) {
        return false;
      }
    }
    return true;
  }
  Vector Project(const Vector& x) const override {
    return x.cwiseMax(center_ - half_).cwiseMin(center_ + half_);
  }
  double L2Diameter() const override { return 2.0 * half_.norm(); }
  Vector BoxCenter() const override { return center_; }
  Vector BoxHalfWidths() const override { return half_; }
  std::string Describe() const override {
    return absl::StrCat("box(p=", half_.size(), ")");
  }
  double Gauge(const Vector& x) const override {
    if (!center_.isZero(0.0)) return BodyOracle::Gauge(x);
    return (x.cwiseAbs().array() / half_.array()).maxCoeff();
  }
  double InscribedRadius(const Vector& c) const override {
    return std::max(
        0.0, (half_ - (c - center_).cwiseAbs()).minCoeff());
  }

 private:
  Vector center_;
  Vector half_;
};

class BallIntersectionOracle final : public BodyOracle {
 public:
  BallIntersectionOracle(std::shared_ptr<const BodyOracle> base, Vector center,
                         double radius)
      : base_(std::move(base)), cap_(std::move(center), radius) {}

  int dimension() const override { return base_->dimension(); }
  bool Contains(const Vector& x) const override {
    return cap_.Contains(x) && base_->Contains(x);
  }
  Vector Project(const Vector& x) const override {
    if (Contains(x)) return x;
    // A projection onto one set that lands in the other is the projection
    // onto the intersection.
    Vector on_cap = cap_.Project(x);
    if (base_->Contains(on_cap)) return on_cap;
    Vector on_base = base_->Project(x);
    if (cap_.Contains(on_base)) return on_base;
    return Dykstra(x);
  }
  double L2Diameter() const override {
    return std::min(base_->L2Diameter(), cap_.L2Diameter());
  }
  Vector BoxCenter() const override {
    auto [lo, hi] = Bounds();
    return 0.5 * (lo + hi);
  }
  Vector BoxHalfWidths() const override {
    auto [lo, hi] = Bounds();
    return 0.5 * (hi - lo);
  }
  std::string Describe() const override {
    return absl::StrCat(base_->Describe(), " & ", cap_.Describe());
  }
  double InscribedRadius(const Vector& c) const override {
    return std::min(base_->InscribedRadius(c), cap_.InscribedRadius(c));
  }

  const BodyOracle& base() const { return *base_; }
  const Vector& cap_center() const { return cap_.center(); }
  double cap_radius() const { return cap_.radius(); }

  // Dykstra's alternating projections between the cap ball and the base.
  Vector Dykstra(const Vector& x) const {
    Vector current = x;
    Vector p = Vector::Zero(x.size());
    Vector q = Vector::Zero(x.size());
    for (int sweep = 0; sweep < kDykstraMaxSweeps; ++sweep) {
      Vector y = base_->Project(current + p);
      p = current + p - y;
      Vector next = cap_.Project(y + q);
      q = y + q - next;
      double change = (next - current).norm();
      current = std::move(next);
      if (change <= kDykstraTolerance && (current - y).norm() <=
                                             kMembershipTolerance) {
        break;
      }
    }
    return current;
  }

 private:
  std::pair<Vector, Vector> Bounds() const {
    const Vector cap_lo =
        (cap_.center().array() - cap_.radius()).matrix();
    const Vector cap_hi =
        (cap_.center().array() + cap_.radius()).matrix();
    Vector lo = (base_->BoxCenter() - base_->BoxHalfWidths()).cwiseMax(cap_lo);
    Vector hi = (base_->BoxCenter() + base_->BoxHalfWidths()).cwiseMin(cap_hi);
    return {lo, hi.cwiseMax(lo)};
  }

  std::shared_ptr<const BodyOracle> base_;
  BallOracle cap_;
};

}  // namespace internal

// Immutable value handle around a body oracle.
class ConvexBody {
 public:
  enum class Kind { kBall, kBox, kBallIntersection, kCustom };

  // r * B in R^p, centered at the origin.
  static absl::StatusOr<ConvexBody> Ball(int p, double radius) {
    if (p < 1 || !(radius > 0.0) || !std::isfinite(radius)) {
      return MakeError(ErrorKind::kInvalidBody,
                       "ball needs p >= 1 and a positive finite radius");
    }
    return ConvexBody(Kind::kBall, std::make_shared<internal::BallOracle>(
                                       Vector::Zero(p), radius));
  }

  static absl::StatusOr<ConvexBody> Box(const Vector& half_widths) {
    return Box(Vector::Zero(half_widths.size()), half_widths);
  }

  static absl::StatusOr<ConvexBody> Box(const Vector& center,
                                        const Vector& half_widths) {
    if (half_widths.size() < 1 || center.size() != half_widths.size() ||
        !AllFinite(half_widths) || !AllFinite(center) ||
        (half_widths.array() <= 0.0).any()) {
      return MakeError(ErrorKind::kInvalidBody,
                       "box needs positive finite half-widths");
    }
    return ConvexBody(Kind::kBox,
                      std::make_shared<internal::BoxOracle>(center,
                                                            half_widths));
  }

  static absl::StatusOr<ConvexBody> FromOracle(
      std::shared_ptr<const BodyOracle> oracle) {
    if (oracle == nullptr || oracle->dimension() < 1) {
      return MakeError(ErrorKind::kInvalidBody, "null or zero-dimension oracle");
    }
    return ConvexBody(Kind::kCustom, std::move(oracle));
  }

  Kind kind() const { return kind_; }
  int dimension() const { return oracle_->dimension(); }
  bool Contains(const Vector& x) const { return oracle_->Contains(x); }
  double L2Diameter() const { return oracle_->L2Diameter(); }
  // Largest edge of the bounding box.
  double LinfDiameter() const {
    return 2.0 * oracle_->BoxHalfWidths().maxCoeff();
  }
  double InscribedRadius(const Vector& c) const {
    return oracle_->InscribedRadius(c);
  }
  std::string Describe() const { return oracle_->Describe(); }
  const BodyOracle& oracle() const { return *oracle_; }
  std::shared_ptr<const BodyOracle> shared_oracle() const { return oracle_; }

 private:
  friend absl::StatusOr<ConvexBody> IntersectBall(const ConvexBody&,
                                                  const Vector&, double);
  ConvexBody(Kind kind, std::shared_ptr<const BodyOracle> oracle)
      : kind_(kind), oracle_(std::move(oracle)) {}

  Kind kind_;
  std::shared_ptr<const BodyOracle> oracle_;
};

inline absl::Status CheckVector(const ConvexBody& body, const Vector& x) {
  if (x.size() != body.dimension()) {
    return MakeError(ErrorKind::kInvalidArgument,
                     absl::StrCat("dimension mismatch: got ", x.size(),
                                  ", body has ", body.dimension()));
  }
  if (!AllFinite(x)) {
    return MakeError(ErrorKind::kInvalidArgument, "non-finite input");
  }
  return absl::OkStatus();
}

inline absl::StatusOr<Vector> Project(const ConvexBody& body,
                                      const Vector& theta) {
  DP_ERM_RETURN_IF_ERROR(CheckVector(body, theta));
  return body.oracle().Project(theta);
}

inline absl::Status CheckOriginInterior(const ConvexBody& body) {
  if (!(body.InscribedRadius(Vector::Zero(body.dimension())) > 0.0)) {
    return MakeError(ErrorKind::kInvalidBody,
                     "body does not contain the origin in its interior");
  }
  return absl::OkStatus();
}

inline absl::StatusOr<double> Gauge(const ConvexBody& body,
                                    const Vector& theta) {
  DP_ERM_RETURN_IF_ERROR(CheckVector(body, theta));
  DP_ERM_RETURN_IF_ERROR(CheckOriginInterior(body));
  return body.oracle().Gauge(theta);
}

// alpha * max(0, gauge - 1).
inline absl::StatusOr<double> GaugePenalty(const ConvexBody& body,
                                           const Vector& theta, double alpha) {
  if (!(alpha > 0.0)) {
    return MakeError(ErrorKind::kInvalidArgument, "alpha must be positive");
  }
  DP_ERM_ASSIGN_OR_RETURN(double psi, Gauge(body, theta));
  return alpha * std::max(0.0, psi - 1.0);
}

// Axis-aligned box enclosing the body (centered at the body's box center).
inline ConvexBody BoundingCube(const ConvexBody& body) {
  if (body.kind() == ConvexBody::Kind::kBox) return body;
  return *ConvexBody::Box(body.oracle().BoxCenter(),
                          body.oracle().BoxHalfWidths());
}

inline absl::StatusOr<ConvexBody> IntersectBall(const ConvexBody& body,
                                                const Vector& center,
                                                double radius) {
  DP_ERM_RETURN_IF_ERROR(CheckVector(body, center));
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    return MakeError(ErrorKind::kInvalidArgument, "radius must be positive");
  }
  Vector nearest = body.oracle().Project(center);
  if ((nearest - center).norm() > radius) {
    return MakeError(ErrorKind::kEmptyBody,
                     "ball does not meet the body");
  }
  // A ball around the origin inside a ball around the origin is a ball.
  if (body.kind() == ConvexBody::Kind::kBall && center.isZero(0.0)) {
    const auto& ball =
        static_cast<const internal::BallOracle&>(body.oracle());
    if (ball.center().isZero(0.0)) {
      return ConvexBody::Ball(body.dimension(),
                              std::min(radius, ball.radius()));
    }
  }
  return ConvexBody(ConvexBody::Kind::kBallIntersection,
                    std::make_shared<internal::BallIntersectionOracle>(
                        body.shared_oracle(), center, radius));
}

// Uniform draw from the unit ball: Gaussian direction, radius U^{1/p}.
template <typename URBG>
Vector UniformBallSample(int p, URBG& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Vector direction(p);
  double norm = 0.0;
  do {
    for (int j = 0; j < p; ++j) direction(j) = normal(rng);
    norm = direction.norm();
  } while (norm == 0.0);
  double radius = std::pow(uniform(rng), 1.0 / p);
  return direction * (radius / norm);
}

// Checks B ⊆ C via gauge tests on the 2p signed unit vectors and the 2^min(p,
// 10) sign diagonals. Sets *diameter_warning when ‖C‖₂ exceeds 2p.
inline absl::Status CheckIsotropic(const ConvexBody& body,
                                   bool* diameter_warning = nullptr) {
  DP_ERM_RETURN_IF_ERROR(CheckOriginInterior(body));
  const int p = body.dimension();
  auto check = [&](const Vector& u) -> absl::Status {
    double g = body.oracle().Gauge(u);
    if (g > 1.0 + kMembershipTolerance) {
      return MakeError(ErrorKind::kInvalidBody,
                       "body does not contain the unit ball");
    }
    return absl::OkStatus();
  };
  for (int j = 0; j < p; ++j) {
    for (double sign : {-1.0, 1.0}) {
      Vector u = Vector::Zero(p);
      u(j) = sign;
      DP_ERM_RETURN_IF_ERROR(check(u));
    }
  }
  const int diag_bits = std::min(p, 10);
  for (int mask = 0; mask < (1 << diag_bits); ++mask) {
    Vector u = Vector::Constant(p, 1.0);
    for (int j = 0; j < diag_bits; ++j) {
      if (mask & (1 << j)) u(j) = -1.0;
    }
    DP_ERM_RETURN_IF_ERROR(check(u / u.norm()));
  }
  if (diameter_warning != nullptr) {
    *diameter_warning = body.L2Diameter() > 2.0 * p;
  }
  return absl::OkStatus();
}

}  // namespace dp_erm

#endif  // DP_ERM_GEOMETRY_H_
