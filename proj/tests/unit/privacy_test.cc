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

#include "dp_erm/privacy.h"

#include <cmath>

#include "boost/multiprecision/cpp_bin_float.hpp"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dp_erm {
namespace {

using ::dp_erm::testing_util::HasKind;
using Big = boost::multiprecision::cpp_bin_float_50;

// 50-digit reference evaluations.
double BigSigmaSq(double l, int64_t n, double eps, double delta) {
  Big L(l), N(n), E(eps), D(delta);
  return static_cast<double>(32 * L * L * N * N * log(N / D) * log(1 / D) /
                             (E * E));
}

double BigComposition(double eps, int64_t t, double delta) {
  Big e(eps), T(t), d(delta);
  return static_cast<double>(sqrt(2 * T * log(1 / d)) * e +
                             T * e * (exp(e) - 1));
}

TEST(NoiseGdSigmaSqTest, FrozenValue) {
  // 32·10⁴·ln(10⁸)·ln(10⁶), 40-digit evaluation.
  const double kFrozen = 81437154.976948193;
  EXPECT_NEAR(BigSigmaSq(1, 100, 1, 1e-6), kFrozen, 1e-12 * kFrozen);
  EXPECT_NEAR(*NoiseGdSigmaSq(1, 100, 1, 1e-6), kFrozen, 1e-12 * kFrozen);
}

TEST(NoiseGdSigmaSqTest, Scaling) {
  double base = *NoiseGdSigmaSq(1, 50, 1, 1e-5);
  EXPECT_NEAR(*NoiseGdSigmaSq(2, 50, 1, 1e-5), 4 * base, 1e-9 * base);
  EXPECT_NEAR(*NoiseGdSigmaSq(1, 50, 2, 1e-5), base / 4, 1e-9 * base);
}

TEST(NoiseGdSigmaSqTest, RejectsBadInputs) {
  EXPECT_THAT(NoiseGdSigmaSq(1, 100, 1, 0.0),
              HasKind(ErrorKind::kInvalidArgument));
  EXPECT_THAT(NoiseGdSigmaSq(1, 1, 1, 1e-6),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(NoiseGdSigmaSqTest, MatchesHighPrecisionOnGrid) {
  for (int64_t n : {2, 10, 100, 1000, 100000}) {
    for (double eps : {0.1, 0.5, 1.0, 3.0}) {
      for (double delta : {1e-3, 1e-6, 1e-9}) {
        double want = BigSigmaSq(1.5, n, eps, delta);
        EXPECT_NEAR(*NoiseGdSigmaSq(1.5, n, eps, delta), want, 1e-12 * want);
      }
    }
  }
}

TEST(StrongCompositionTest, FrozenValue) {
  // √(2 ln 10⁶)·0.1 + 0.1(e^0.1 − 1), 40-digit evaluation.
  const double kFrozen = 0.53616926878325796;
  EXPECT_NEAR(BigComposition(0.1, 1, 1e-6), kFrozen, 1e-15);
  EXPECT_NEAR(*StrongComposition(0.1, 1, 1e-6), kFrozen, 1e-12 * kFrozen);
}

TEST(StrongCompositionTest, VanishesAndScales) {
  EXPECT_LT(*StrongComposition(1e-12, 10, 1e-6), 1e-10);
  double one = *StrongComposition(1e-4, 100, 1e-6);
  double four = *StrongComposition(1e-4, 400, 1e-6);
  EXPECT_NEAR(four / one, 2.0, 0.1);
}

TEST(StrongCompositionTest, MatchesHighPrecisionOnGrid) {
  for (int64_t t : {1, 7, 100, 10000, 1000000}) {
    for (double eps : {1e-5, 1e-3, 0.05, 0.5}) {
      for (double delta : {0.5, 1e-6}) {
        double want = BigComposition(eps, t, delta);
        EXPECT_NEAR(*StrongComposition(eps, t, delta), want, 1e-12 * want);
      }
    }
  }
}

TEST(SubsampleAmplificationTest, Examples) {
  EXPECT_DOUBLE_EQ(*SubsampleAmplification(1.0, 0.01), 0.02);
  EXPECT_DOUBLE_EQ(*SubsampleAmplification(0.5, 1.0 / 100), 0.01);
  EXPECT_THAT(SubsampleAmplification(1.5, 0.1),
              HasKind(ErrorKind::kPreconditionViolation));
  EXPECT_THAT(SubsampleAmplification(0.5, 1.0),
              HasKind(ErrorKind::kInvalidArgument));
}

// The recomputed chain at the published calibration composes to more than
// the target; see the decisions notes. The assertion below records the
// measured behaviour rather than the claimed one.
TEST(NoiseGdPrivacyCheckTest, CalibratedSigmaChainValues) {
  NoiseGdAudit audit = *ComputeNoiseGdAudit(
      1, 100, 1, 1e-6, *NoiseGdSigmaSq(1, 100, 1, 1e-6));
  EXPECT_EQ(audit.steps, 10000);
  EXPECT_NEAR(audit.claimed_step_epsilon,
              1.0 / (2.0 * std::sqrt(std::log(1e6))), 1e-15);
  EXPECT_GT(audit.total_epsilon, 1.0);
  EXPECT_LT(audit.total_epsilon, 1.5);
  EXPECT_GT(audit.sigma_sq_factor_needed, 1.0);
  EXPECT_LT(audit.sigma_sq_factor_needed, 2.0);
  // Scaling σ² by the reported factor passes.
  NoiseGdAudit scaled = *ComputeNoiseGdAudit(
      1, 100, 1, 1e-6,
      audit.sigma_sq_factor_needed * *NoiseGdSigmaSq(1, 100, 1, 1e-6));
  EXPECT_TRUE(scaled.ok);
  EXPECT_NEAR(scaled.total_epsilon, 1.0, 1e-9);
}

TEST(NoiseGdPrivacyCheckTest, HalvedSigmaFails) {
  double s2 = *NoiseGdSigmaSq(1, 100, 1, 1e-6);
  EXPECT_THAT(NoiseGdPrivacyCheck(1, 100, 1, 1e-6, s2 / 2),
              HasKind(ErrorKind::kCalibrationBug));
  EXPECT_FALSE(ComputeNoiseGdAudit(1, 100, 1, 1e-6, s2 / 2)->ok);
}

TEST(NoiseGdPrivacyCheckTest, LargeEpsilonIsPreconditionViolation) {
  // ε/(2√ln(1/δ)) > 1.
  EXPECT_THAT(NoiseGdPrivacyCheck(1, 100, 10, 1e-3),
              HasKind(ErrorKind::kPreconditionViolation));
}

TEST(GaussianMechanismDeltaTest, ClassicalCalibrationMeetsDelta) {
  // σ = s√(2 ln(1.25/δ))/ε is (ε, δ)-DP for ε < 1.
  const double s = 1.0, eps = 0.5, delta = 1e-5;
  double sigma = s * std::sqrt(2 * std::log(1.25 / delta)) / eps;
  EXPECT_LE(GaussianMechanismDelta(s, sigma, eps), delta);
  EXPECT_GT(GaussianMechanismDelta(s, sigma / 3, eps), delta);
}

TEST(BudgetTest, ExactFractions) {
  PrivacyAudit audit;
  audit.AddStage("a", 1, 3, 1, 2);
  audit.AddStage("b", 2, 3, 1, 2);
  EXPECT_TRUE(BudgetWithinDeclared(audit));
  audit.AddStage("c", 1, 1000000);
  EXPECT_FALSE(BudgetWithinDeclared(audit));

  PrivacyAudit outer;
  PrivacyAudit inner;
  inner.AddStage("x", 1, 1);
  for (int i = 0; i < 3; ++i) outer.AddScaled(inner, "run:", 1, 6, 1, 3);
  outer.AddStage("select", 1, 2);
  EXPECT_TRUE(BudgetWithinDeclared(outer));
}

TEST(PrivacyParamsTest, Validation) {
  EXPECT_TRUE(PrivacyParams({1.0, 0.0}).Validate().ok());
  EXPECT_FALSE(PrivacyParams({1.0, 0.0}).Validate(true).ok());
  EXPECT_FALSE(PrivacyParams({-1.0, 0.0}).Validate().ok());
  EXPECT_FALSE(PrivacyParams({1.0, 1.0}).Validate().ok());
}

}  // namespace
}  // namespace dp_erm
