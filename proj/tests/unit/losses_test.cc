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

#include "dp_erm/losses.h"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "dp_erm/geometry.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dp_erm {
namespace {

using ::dp_erm::testing_util::HasKind;
using ::dp_erm::testing_util::Unlabeled;
using ::dp_erm::testing_util::Vec;

Record Labeled(const Vector& x, double y) { return Record{x, y, true}; }

TEST(LossEvalTest, HingeAtZeroMarginIsOne) {
  LossFunction hinge = HingeLoss();
  EXPECT_DOUBLE_EQ(*LossEval(hinge, Vec({0, 0}), Labeled(Vec({1, 0}), 1)),
                   1.0);
}

TEST(LossEvalTest, HuberizedHingeIsContinuousAtBoundary) {
  const double h = 0.25;
  EXPECT_DOUBLE_EQ(HuberizedPositivePart(h, h), h);
  EXPECT_DOUBLE_EQ(HuberizedPositivePart(-h, h), 0.0);
  EXPECT_NEAR(HuberizedPositivePartDerivative(h, h), 1.0, 1e-15);
  EXPECT_NEAR(HuberizedPositivePartDerivative(-h, h), 0.0, 1e-15);
  // z = 1 − y⟨θ,x⟩ = h.
  LossFunction loss = HuberizedHingeLoss(h);
  Record d = Labeled(Vec({1.0}), 1.0);
  EXPECT_DOUBLE_EQ(*LossEval(loss, Vec({1.0 - h}), d), h);
}

TEST(LossEvalTest, SquaredDistanceAtRecordIsZero) {
  Record d{Vec({0.3, -0.2}), 0.0, false};
  EXPECT_DOUBLE_EQ(*LossEval(SquaredDistanceLoss(), d.x, d), 0.0);
}

TEST(LossEvalTest, MissingLabelIsRejected) {
  Record d{Vec({1.0}), 0.0, false};
  EXPECT_THAT(LossEval(HingeLoss(), Vec({0.0}), d),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(LossSubgradientTest, Examples) {
  Record d{Vec({0.6, 0.8}), 0.0, false};
  Vector theta = Vec({0.1, 0.2});
  EXPECT_TRUE(LossSubgradient(LinearLoss(), theta, d)->isApprox(-d.x));
  EXPECT_TRUE(
      LossSubgradient(SquaredDistanceLoss(), theta, d)->isApprox(theta - d.x));
  // y⟨θ,x⟩ = 2: flat region.
  Record labeled = Labeled(Vec({1.0, 0.0}), 1.0);
  EXPECT_TRUE(LossSubgradient(HingeLoss(), Vec({2.0, 0.0}), labeled)->isZero());
}

TEST(LossSubgradientTest, FiniteDifferencesAtSmoothPoints) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::vector<LossFunction> losses = {
      LinearLoss(), SquaredDistanceLoss(), HingeLoss(),
      HuberizedHingeLoss(0.3), EuclideanMedianLoss(),
      HuberizedHingeLoss(0.3, 1.0, HingeForm::kResidual),
      RegularizedLoss(HuberizedHingeLoss(0.5), 0.7, 3, 1.0)};
  for (const LossFunction& loss : losses) {
    for (int i = 0; i < 200; ++i) {
      Vector theta = Vec({normal(rng), normal(rng), normal(rng)}) * 0.5;
      Vector x = Vec({normal(rng), normal(rng), normal(rng)});
      x /= std::max(1.0, x.norm());
      Record d{x, normal(rng) > 0 ? 1.0 : -1.0, true};
      Vector g = *LossSubgradient(loss, theta, d);
      const double step = 1e-6;
      for (int j = 0; j < 3; ++j) {
        Vector e = Vector::Zero(3);
        e(j) = step;
        double fd = (loss.value(theta + e, d) - loss.value(theta - e, d)) /
                    (2.0 * step);
        // Skip kinks of the hinge and median losses.
        double kink_gap =
            std::min(std::abs(1.0 - d.y * theta.dot(x)),
                     (theta - x).norm());
        if (kink_gap < 1e-3) continue;
        EXPECT_NEAR(fd, g(j), 1e-5 * std::max(1.0, std::abs(g(j))))
            << loss.name;
      }
    }
  }
}

TEST(LossConvexityTest, MidpointInequality) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  std::vector<LossFunction> losses = {LinearLoss(), SquaredDistanceLoss(),
                                      HingeLoss(), HuberizedHingeLoss(0.1),
                                      EuclideanMedianLoss()};
  for (const LossFunction& loss : losses) {
    for (int i = 0; i < 500; ++i) {
      Vector a = Vec({normal(rng), normal(rng)});
      Vector b = Vec({normal(rng), normal(rng)});
      Record d{Vec({normal(rng), normal(rng)}).normalized(), 1.0, true};
      EXPECT_LE(loss.value(0.5 * (a + b), d),
                0.5 * (loss.value(a, d) + loss.value(b, d)) + 1e-12)
          << loss.name;
    }
  }
}

TEST(TotalLossTest, LinearIsNegativeInnerProductWithSum) {
  Dataset data = Unlabeled({Vec({0.6, 0.8}), Vec({1, 0}), Vec({0, -1})});
  Vector theta = Vec({0.3, 0.4});
  Vector sum = Vec({1.6, -0.2});
  EXPECT_NEAR(*TotalLoss(LinearLoss(), theta, data), -theta.dot(sum), 1e-15);
  EXPECT_TRUE(TotalSubgradient(LinearLoss(), theta, data)->isApprox(-sum));
}

TEST(TotalLossTest, IdenticalRecordsScaleLinearly) {
  Record d = Labeled(Vec({0.2, -0.5}), -1.0);
  Dataset data;
  for (int i = 0; i < 7; ++i) data.records.push_back(d);
  Vector theta = Vec({0.4, 0.1});
  LossFunction loss = HuberizedHingeLoss(0.2);
  EXPECT_NEAR(*TotalLoss(loss, theta, data), 7.0 * loss.value(theta, d),
              1e-14);
}

TEST(TotalLossTest, RejectsMixedDimensions) {
  Dataset data = Unlabeled({Vec({1, 0}), Vec({1})});
  EXPECT_THAT(TotalLoss(LinearLoss(), Vec({0, 0}), data),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(LipschitzExtensionTest, InsideBodyEqualsFunction) {
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  ConvexFunction f{[](const Vector& y) { return y.squaredNorm(); },
                   [](const Vector& y) { return Vector(2.0 * y); }};
  EXPECT_DOUBLE_EQ(*LipschitzExtensionEval(f, ball, 3.0, Vec({0.3, 0.4})),
                   0.25);
}

TEST(LipschitzExtensionTest, ZeroFunctionGivesScaledDistance) {
  ConvexBody interval = *ConvexBody::Box(Vec({1}));
  ConvexFunction zero{[](const Vector&) { return 0.0; },
                      [](const Vector& y) { return Vector(Vector::Zero(y.size())); }};
  EXPECT_NEAR(*LipschitzExtensionEval(zero, interval, 1.0, Vec({2.0})), 1.0,
              1e-9);
}

// Minimum over the unit disk of ⟨c,y⟩ + η‖x − y‖ for x outside the disk:
// a coarse interior mesh plus a fine boundary-angle scan refined by
// golden-section search.
double MeshExtensionOracle(const Vector& c, double eta, const Vector& x) {
  double best = 1e300;
  const int radial = 200, angular = 2000;
  for (int i = 0; i <= radial; ++i) {
    double r = static_cast<double>(i) / radial;
    for (int k = 0; k < angular; ++k) {
      double a = 2.0 * M_PI * k / angular;
      Vector y = Vec({r * std::cos(a), r * std::sin(a)});
      best = std::min(best, c.dot(y) + eta * (x - y).norm());
    }
  }
  auto on_circle = [&](double a) {
    Vector y = Vec({std::cos(a), std::sin(a)});
    return c.dot(y) + eta * (x - y).norm();
  };
  const int scan = 100000;
  double grid_best = 0.0, grid_val = 1e300;
  for (int k = 0; k < scan; ++k) {
    double a = 2.0 * M_PI * k / scan;
    double v = on_circle(a);
    if (v < grid_val) grid_val = v, grid_best = a;
  }
  double lo = grid_best - 2.0 * M_PI / scan;
  double hi = grid_best + 2.0 * M_PI / scan;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    double m1 = hi - g * (hi - lo), m2 = lo + g * (hi - lo);
    if (on_circle(m1) < on_circle(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return std::min(best, on_circle(0.5 * (lo + hi)));
}

struct ExtensionCase {
  Vector x;
  double frozen;
};

TEST(LipschitzExtensionTest, LinearOnDiskMatchesMeshOracle) {
  // ‖c‖ = η = 1.
  Vector c = Vec({0.6, -0.8});
  const double eta = 1.0;
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  ConvexFunction f{[c](const Vector& y) { return c.dot(y); },
                   [c](const Vector&) { return c; }};
  const ExtensionCase cases[] = {{Vec({1.5, 0.5}), 0.6685911579620941},
                                 {Vec({-2.0, 0.3}), 0.21815746059136853},
                                 {Vec({0.2, 1.7}), -0.09003309744122445}};
  for (const ExtensionCase& tc : cases) {
    EXPECT_NEAR(MeshExtensionOracle(c, eta, tc.x), tc.frozen, 1e-9);
    EXPECT_NEAR(*LipschitzExtensionEval(f, ball, eta, tc.x), tc.frozen, 1e-6);
  }
}

TEST(LipschitzExtensionTest, RejectsNonPositiveEta) {
  ConvexBody ball = *ConvexBody::Ball(1, 1.0);
  ConvexFunction zero{[](const Vector&) { return 0.0; },
                      [](const Vector& y) { return Vector(Vector::Zero(y.size())); }};
  EXPECT_THAT(LipschitzExtensionEval(zero, ball, 0.0, Vec({2.0})),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(RegularizedLossTest, ConstantsGrow) {
  LossFunction reg = RegularizedLoss(HuberizedHingeLoss(0.5), 2.0, 4, 1.0);
  EXPECT_DOUBLE_EQ(reg.strong_convexity, 0.5);
  EXPECT_DOUBLE_EQ(reg.lipschitz, 1.5);
  EXPECT_DOUBLE_EQ(*reg.smoothness, 1.5);
  EXPECT_TRUE(reg.needs_label);
}

TEST(DatasetCsvTest, RoundTripAndErrors) {
  std::istringstream in("# comment\n0.5,-0.25,1\n\n0,1,-1\n");
  Dataset data = *ParseDatasetCsv(in, /*with_label=*/true);
  ASSERT_EQ(data.size(), 2);
  EXPECT_EQ(data.dimension(), 2);
  EXPECT_DOUBLE_EQ(data.records[0].x(1), -0.25);
  EXPECT_DOUBLE_EQ(data.records[1].y, -1.0);
  std::ostringstream out;
  WriteDatasetCsv(data, out);
  std::istringstream back(out.str());
  Dataset again = *ParseDatasetCsv(back, true);
  EXPECT_TRUE(again.records[0].x.isApprox(data.records[0].x));

  std::istringstream bad_label("0.5,2\n");
  EXPECT_THAT(ParseDatasetCsv(bad_label, true),
              HasKind(ErrorKind::kInvalidArgument));
  std::istringstream ragged("1,2\n1\n");
  EXPECT_THAT(ParseDatasetCsv(ragged, false),
              HasKind(ErrorKind::kInvalidArgument));
  std::istringstream junk("1,abc\n");
  EXPECT_THAT(ParseDatasetCsv(junk, false),
              HasKind(ErrorKind::kInvalidArgument));
}

}  // namespace
}  // namespace dp_erm
