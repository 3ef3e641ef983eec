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

#include "dp_erm/solver.h"

#include <cmath>
#include <random>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dp_erm {
namespace {

using ::dp_erm::testing_util::HasKind;
using ::dp_erm::testing_util::Unlabeled;
using ::dp_erm::testing_util::Vec;

Dataset RandomDataset(int n, int p, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Dataset data;
  for (int i = 0; i < n; ++i) {
    Vector x(p);
    for (int j = 0; j < p; ++j) x(j) = normal(rng);
    x *= scale / std::max(1.0, x.norm());
    data.records.push_back(Record{x, 0.0, false});
  }
  return data;
}

Vector Mean(const Dataset& data) {
  Vector sum = Vector::Zero(data.dimension());
  for (const Record& r : data.records) sum += r.x;
  return sum / data.size();
}

TEST(MinimizeTest, SquaredDistanceGivesMean) {
  std::mt19937_64 rng(1);
  for (int p : {1, 2, 5}) {
    Dataset data = RandomDataset(50, p, 1.0, rng);
    ConvexBody ball = *ConvexBody::Ball(p, 1.0);
    SolverResult opt = *Minimize(SquaredDistanceLoss(), data, ball);
    EXPECT_NEAR((opt.theta - Mean(data)).norm(), 0.0, 1e-9) << p;
  }
}

TEST(MinimizeTest, LinearOnBallGivesNormalizedSum) {
  std::mt19937_64 rng(2);
  for (int p : {2, 3}) {
    Dataset data = RandomDataset(20, p, 1.0, rng);
    Vector sum = Mean(data) * data.size();
    ConvexBody ball = *ConvexBody::Ball(p, 1.0);
    SolverResult opt = *Minimize(LinearLoss(), data, ball);
    EXPECT_NEAR((opt.theta - sum / sum.norm()).norm(), 0.0, 1e-9) << p;
  }
}

TEST(MinimizeTest, SingleRecordMedianIsTheRecord) {
  Dataset data = Unlabeled({Vec({0.3, -0.4})});
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  SolverResult opt = *Minimize(EuclideanMedianLoss(), data, ball);
  EXPECT_NEAR((opt.theta - data.records[0].x).norm(), 0.0, 1e-6);
}

// Weiszfeld iterations run to convergence as an independent reference.
Vector WeiszfeldReference(const Dataset& data) {
  Vector y = Mean(data);
  for (int it = 0; it < 100000; ++it) {
    Vector num = Vector::Zero(y.size());
    double den = 0.0;
    for (const Record& r : data.records) {
      double d = std::max((y - r.x).norm(), 1e-15);
      num += r.x / d;
      den += 1.0 / d;
    }
    y = num / den;
  }
  return y;
}

TEST(MinimizeTest, MedianMatchesWeiszfeld) {
  std::mt19937_64 rng(3);
  Dataset data = RandomDataset(15, 2, 0.8, rng);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  SolverResult opt = *Minimize(EuclideanMedianLoss(), data, ball);
  Vector ref = WeiszfeldReference(data);
  LossFunction loss = EuclideanMedianLoss();
  EXPECT_NEAR(opt.value, internal::SumLoss(loss, ref, data), 1e-7);
}

TEST(MinimizeTest, HingeOnIntervalMatchesBreakpointSearch) {
  Dataset data;
  for (double x : {-1.0, 0.5, 0.25, 1.0, -0.75}) {
    data.records.push_back(Record{Vec({x}), x > 0 ? 1.0 : -1.0, true});
  }
  data.records.push_back(Record{Vec({0.9}), -1.0, true});
  LossFunction hinge = HingeLoss();
  ConvexBody box = *ConvexBody::Box(Vec({2}));
  // Piecewise linear: the minimum sits at a breakpoint y·θ·x = 1 or an end.
  double best = 1e300;
  std::vector<double> candidates = {-2.0, 2.0};
  for (const Record& r : data.records) candidates.push_back(1.0 / (r.y * r.x(0)));
  for (double t : candidates) {
    if (std::abs(t) <= 2.0) {
      best = std::min(best, internal::SumLoss(hinge, Vec({t}), data));
    }
  }
  EXPECT_NEAR(Minimize(hinge, data, box)->value, best, 1e-9);
}

TEST(ExcessRiskTest, ZeroAtOptimum) {
  std::mt19937_64 rng(4);
  Dataset data = RandomDataset(30, 3, 1.0, rng);
  ConvexBody ball = *ConvexBody::Ball(3, 1.0);
  SolverResult opt = *Minimize(SquaredDistanceLoss(), data, ball);
  EXPECT_EQ(*ExcessRisk(opt.theta, SquaredDistanceLoss(), data, ball), 0.0);
}

TEST(ExcessRiskTest, LinearIdentity) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Dataset data = RandomDataset(10, 3, 1.0, rng);
  Vector sum = Mean(data) * data.size();
  Vector star = sum / sum.norm();
  ConvexBody ball = *ConvexBody::Ball(3, 1.0);
  for (int i = 0; i < 20; ++i) {
    Vector theta = Vec({normal(rng), normal(rng), normal(rng)}).normalized();
    double want = sum.norm() * (1.0 - theta.dot(star));
    EXPECT_NEAR(*ExcessRisk(theta, LinearLoss(), data, ball), want, 1e-8);
  }
}

TEST(ExcessRiskTest, SquaredIdentity) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  Dataset data = RandomDataset(40, 2, 1.0, rng);
  Vector q = Mean(data);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  for (int i = 0; i < 20; ++i) {
    Vector theta = Vec({normal(rng), normal(rng)}) * 0.4;
    theta = ball.oracle().Project(theta);
    double want = 0.5 * data.size() * (theta - q).squaredNorm();
    EXPECT_NEAR(*ExcessRisk(theta, SquaredDistanceLoss(), data, ball), want,
                1e-8);
  }
}

TEST(ExcessRiskTest, RejectsPointOutsideBody) {
  Dataset data = Unlabeled({Vec({0.1, 0.1})});
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  EXPECT_THAT(ExcessRisk(Vec({2, 0}), LinearLoss(), data, ball),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(ClampExcessTest, FloorsAndClamps) {
  EXPECT_EQ(ClampExcess(-1.0, 1e-6), 0.0);
  EXPECT_EQ(ClampExcess(5e-7, 1e-6), 0.0);
  EXPECT_EQ(ClampExcess(0.5, 1e-6), 0.5);
}

TEST(MinimizeObjectiveTest, RegularizedLinearTermClosedForm) {
  // argmin over the ball of (c/2)‖θ‖² + ⟨b,θ⟩ with ‖b‖/c < 1 is −b/c.
  Dataset data = Unlabeled({Vec({0.0, 0.0})});
  LossFunction loss = LinearLoss();
  Objective obj = MakeObjective(loss, data, 4.0, Vec({1.0, -2.0}), 1.0);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  SolverResult res = *MinimizeObjective(obj, ball, 1e-12);
  EXPECT_NEAR((res.theta - Vec({-0.25, 0.5})).norm(), 0.0, 1e-6);
}

}  // namespace
}  // namespace dp_erm
