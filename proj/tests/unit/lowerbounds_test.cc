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

#include "dp_erm/lowerbounds.h"

#include <cmath>
#include <random>

#include "dp_erm/solver.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dp_erm {
namespace {

using ::dp_erm::testing_util::HasKind;
using ::dp_erm::testing_util::Unlabeled;
using ::dp_erm::testing_util::Vec;

TEST(PackingTest, SmallFamily) {
  std::mt19937_64 rng(1);
  PackingFamily family = *PackingPoints(2, 2, rng);
  ASSERT_EQ(family.points.size(), 2u);
  EXPECT_GE((family.points[0] - family.points[1]).norm(), 1.0 / 8.0);
  for (const Vector& v : family.points) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_DOUBLE_EQ(std::abs(v(j)), 1.0 / std::sqrt(2.0));
    }
    EXPECT_NEAR(v.norm(), 1.0, 1e-15);
  }
}

TEST(PackingTest, HighDimensionNeverRejects) {
  // Distinct sign vectors in p = 64 are at least 2/8 apart.
  for (uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    PackingFamily family = *PackingPoints(64, 256, rng);
    EXPECT_EQ(family.points.size(), 256u);
    EXPECT_EQ(family.rejections, 0);
    EXPECT_GE(family.min_distance, 1.0 / 8.0);
  }
}

TEST(PackingTest, RejectsOversizedFamily) {
  std::mt19937_64 rng(2);
  EXPECT_THAT(PackingPoints(2, 3, rng), HasKind(ErrorKind::kInvalidArgument));
  EXPECT_THAT(PackingPoints(64, (int64_t{1} << 16) + 1, rng),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(PaddingThresholdTest, Examples) {
  EXPECT_EQ(PaddingThreshold(40, 1.0), 2);
  EXPECT_EQ(PaddingThreshold(2, 1.0), 1);
  EXPECT_EQ(PaddingThreshold(100, 0.5), 10);
}

TEST(LinearInstanceTest, UnpaddedUsesSinglePoint) {
  std::mt19937_64 rng(3);
  // n* = ⌈64/(20·0.1)⌉ = 32.
  HardInstance inst = *LinearInstance(20, 64, 0.1, rng);
  EXPECT_FALSE(inst.padded);
  EXPECT_EQ(inst.m, 20.0);
  EXPECT_NEAR(inst.sum_norm, 20.0, 1e-12);
  for (const Record& r : inst.data.records) {
    EXPECT_TRUE(r.x.isApprox(inst.data.records[0].x));
  }
  EXPECT_NEAR(inst.theta_star.norm(), 1.0, 1e-12);
}

TEST(LinearInstanceTest, PaddedCountsAndNorms) {
  std::mt19937_64 rng(4);
  for (int64_t n : {40, 41}) {
    HardInstance inst = *LinearInstance(n, 64, 0.1, rng);
    EXPECT_TRUE(inst.padded);
    EXPECT_EQ(inst.m, 32.0);
    EXPECT_EQ(inst.data.size(), n);
    EXPECT_GE(inst.sum_norm, inst.m - 1.0 - 1e-12);
    EXPECT_LE(inst.sum_norm, inst.m + 1.0 + 1e-12);
    SolverResult opt = *Minimize(inst.loss, inst.data, inst.body);
    EXPECT_NEAR((opt.theta - inst.theta_star).norm(), 0.0, 1e-8);
    EXPECT_NEAR(opt.value, -inst.sum_norm, 1e-8);
  }
}

TEST(QuadraticInstanceTest, OptimumIsMarginalQuery) {
  std::mt19937_64 rng(5);
  HardInstance inst = *QuadraticInstance(50, 16, 0.5, rng);
  EXPECT_TRUE(inst.theta_star.isApprox(MarginalQuery(inst.data)));
  SolverResult opt = *Minimize(inst.loss, inst.data, inst.body);
  EXPECT_NEAR((opt.theta - inst.theta_star).norm(), 0.0, 1e-9);
}

TEST(MarginalErrorTest, Examples) {
  Dataset data = Unlabeled({Vec({1, 0}), Vec({0, 1})});
  EXPECT_DOUBLE_EQ(*MarginalError(Vec({0.5, 0.5}), data), 0.0);
  EXPECT_NEAR(*MarginalError(Vec({0.5, 0.6}), data), 0.1, 1e-15);
  EXPECT_THAT(MarginalError(Vec({0.5}), data),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(MarginalErrorTest, RescaledUnpaddedReduction) {
  // When every record equals d, ‖(M/n)θ − q‖ = (M/n)‖θ − d‖ with M = n.
  std::mt19937_64 rng(6);
  HardInstance inst = *QuadraticInstance(200, 64, 0.01, rng);
  ASSERT_FALSE(inst.padded);
  Vector d = inst.data.records[0].x;
  Vector theta = d + 0.1 * Vector::Unit(64, 0);
  double scaled = *MarginalError((inst.m / 200.0) * theta, inst.data);
  EXPECT_NEAR(scaled, 0.1, 1e-12);
}

// Minimum of a 1-D piecewise linear objective over its breakpoints.
double BreakpointMinimum(const LossFunction& loss, const Dataset& data,
                         std::vector<double> candidates,
                         double* argmin = nullptr) {
  double best = 1e300;
  for (double t : candidates) {
    double v = internal::SumLoss(loss, Vec({t}), data);
    if (v < best) {
      best = v;
      if (argmin) *argmin = t;
    }
  }
  return best;
}

TEST(HuberizationTest, FirstDatasetCountsAndOptimum) {
  HuberizationPair pair = *HuberizationInstances(300, 0.01);
  EXPECT_EQ(pair.d1_negative, 100);
  int64_t neg = 0;
  for (const Record& r : pair.d1.records) {
    if (r.x(0) < 0) {
      ++neg;
      EXPECT_EQ(r.y, 1.0);
    } else {
      EXPECT_EQ(r.y, -1.0);
    }
  }
  EXPECT_EQ(neg, 100);
  EXPECT_EQ(pair.d1.size() - neg, 200);

  // Residual hinge: breakpoints at θ = y/x = −1 and the box ends.
  LossFunction hinge = HingeLoss(1.0, HingeForm::kResidual);
  double argmin = 0.0;
  double best = BreakpointMinimum(hinge, pair.d1, {-2.0, -1.0, 2.0}, &argmin);
  EXPECT_EQ(argmin, -1.0);
  EXPECT_EQ(best, 0.0);
  SolverResult opt = *Minimize(hinge, pair.d1, HuberizationBody());
  EXPECT_NEAR(opt.value, best, 1e-9);
  EXPECT_NEAR(opt.theta(0), -1.0, 1e-6);
}

TEST(HuberizationTest, SecondDatasetAtSmallH) {
  const int64_t n = 400;
  HuberizationPair pair = *HuberizationInstances(n, 1.0 / (16.0 * n));
  EXPECT_EQ(pair.d2_negative, 0);
  for (const Record& r : pair.d2.records) {
    EXPECT_EQ(r.x(0), 1.0);
    EXPECT_EQ(r.y, 1.0);
  }
  HuberizationPair wide = *HuberizationInstances(n, 1.0);
  EXPECT_EQ(wide.d2_negative, 200);
}

TEST(HuberizationTest, RejectsBadInputs) {
  EXPECT_THAT(HuberizationInstances(0, 0.1),
              HasKind(ErrorKind::kInvalidArgument));
  EXPECT_THAT(HuberizationInstances(10, 0.0),
              HasKind(ErrorKind::kInvalidArgument));
}

}  // namespace
}  // namespace dp_erm
