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

#include "dp_erm/mechanisms.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dp_erm/lowerbounds.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dp_erm {
namespace {

using ::dp_erm::testing_util::HasKind;
using ::dp_erm::testing_util::Unlabeled;
using ::dp_erm::testing_util::Vec;

Dataset Copies(const Vector& x, int n) {
  return Unlabeled(std::vector<Vector>(n, x));
}

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

double AuditValue(const PrivacyAudit& audit, const std::string& key) {
  for (const auto& [k, v] : audit.values) {
    if (k == key) return v;
  }
  ADD_FAILURE() << "missing audit value " << key;
  return NAN;
}

TEST(NoiseGdTest, NoiselessFullGradientConverges) {
  std::mt19937_64 rng(1);
  Dataset data = RandomDataset(200, 2, 0.5, rng);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  NoiseGdOptions options;
  options.rate = LearningRate::kStronglyConvex;
  options.full_gradient = true;
  options.sigma_sq_override = 0.0;
  MechanismOutput out = *NoiseGd(data, SquaredDistanceLoss(), ball,
                                 {1.0, 1e-6}, options, rng);
  EXPECT_LE(*ExcessRisk(out.theta, SquaredDistanceLoss(), data, ball), 1e-4);
  EXPECT_FALSE(out.audit.is_private);
}

TEST(NoiseGdTest, EqualRecordsStayInBody) {
  std::mt19937_64 rng(2);
  Dataset data = Copies(Vec({0.6, 0.8}), 30);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  for (int i = 0; i < 5; ++i) {
    MechanismOutput out =
        *NoiseGd(data, LinearLoss(), ball, {1.0, 1e-5}, {}, rng);
    EXPECT_TRUE(ball.Contains(out.theta));
    EXPECT_TRUE(std::isfinite(
        *ExcessRisk(out.theta, LinearLoss(), data, ball)));
  }
}

TEST(NoiseGdTest, HalvedSigmaIsNotPrivate) {
  std::mt19937_64 rng(3);
  Dataset data = Copies(Vec({0.5}), 20);
  ConvexBody interval = *ConvexBody::Box(Vec({1}));
  double calibrated = *NoiseGdSigmaSq(1.0, 20, 1.0, 1e-5);
  NoiseGdOptions options;
  options.sigma_sq_override = calibrated / 2;
  MechanismOutput out =
      *NoiseGd(data, LinearLoss(), interval, {1.0, 1e-5}, options, rng);
  EXPECT_FALSE(out.audit.is_private);
  EXPECT_FALSE(out.audit.ok);
}

TEST(NoiseGdTest, PreconditionErrors) {
  std::mt19937_64 rng(4);
  Dataset data = Copies(Vec({0.5}), 20);
  ConvexBody interval = *ConvexBody::Box(Vec({1}));
  EXPECT_THAT(NoiseGd(data, LinearLoss(), interval, {10.0, 1e-3}, {}, rng),
              HasKind(ErrorKind::kPreconditionViolation));
  NoiseGdOptions sc;
  sc.rate = LearningRate::kStronglyConvex;
  EXPECT_THAT(NoiseGd(data, LinearLoss(), interval, {1.0, 1e-5}, sc, rng),
              HasKind(ErrorKind::kPreconditionViolation));
  EXPECT_THAT(NoiseGd(data, LinearLoss(), interval, {1.0, 0.0}, {}, rng),
              HasKind(ErrorKind::kInvalidArgument));
}

TEST(ExpMechExactTest, ZeroLossIsUniform) {
  std::mt19937_64 rng(5);
  Dataset data = Copies(Vec({0.0}), 3);
  ConvexBody interval = *ConvexBody::Box(Vec({1}));
  ExactExpMechSampler sampler = *ExactExpMechSampler::Create(
      data, LinearLoss(), interval, ExpMechScale(LinearLoss(), interval, 1.0));
  const int draws = 20000, bins = 10;
  std::vector<int> counts(bins, 0);
  for (int i = 0; i < draws; ++i) {
    double t = (*sampler.Sample(rng))(0);
    ++counts[std::min(bins - 1, static_cast<int>((t + 1.0) / 2.0 * bins))];
  }
  double chi2 = 0.0, expected = static_cast<double>(draws) / bins;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // χ²₉ at 0.001
}

TEST(ExpMechExactTest, OneDimensionalClosedFormCdf) {
  std::mt19937_64 rng(6);
  // L(θ;D) = −4θ, ε = 1, ‖C‖₂ = 2: density ∝ e^{θ} on [−1, 1].
  Dataset data = Copies(Vec({1.0}), 4);
  ConvexBody interval = *ConvexBody::Box(Vec({1}));
  const double a = 1.0 / (2.0 * 2.0) * 4.0;
  const int draws = 100000;
  std::vector<double> xs(draws);
  for (double& x : xs) {
    x = (ExpMechExact(data, LinearLoss(), interval, {1.0, 0.0}, rng))
            ->theta(0);
  }
  std::sort(xs.begin(), xs.end());
  auto cdf = [a](double t) {
    return (std::exp(a * t) - std::exp(-a)) / (std::exp(a) - std::exp(-a));
  };
  double sup = 0.0;
  for (int i = 0; i < draws; ++i) {
    double f = cdf(xs[i]);
    sup = std::max({sup, std::abs(f - static_cast<double>(i) / draws),
                    std::abs(f - static_cast<double>(i + 1) / draws)});
  }
  EXPECT_LE(sup, 0.01);
}

TEST(ExpMechExactTest, HighDimensionNeedsEfficientVariant) {
  std::mt19937_64 rng(7);
  Dataset data = Copies(Vector::Zero(4), 2);
  EXPECT_THAT(ExpMechExact(data, LinearLoss(), *ConvexBody::Ball(4, 1.0),
                           {1.0, 0.0}, rng),
              HasKind(ErrorKind::kUseEfficientVariant));
}

TEST(ExpMechEfficientTest, StrictStepOverrideRejected) {
  std::mt19937_64 rng(8);
  Dataset data = Copies(Vec({0.5, 0.0}), 5);
  SamplerOptions options;
  options.steps_override = 1;
  EXPECT_THAT(ExpMechEfficient(data, LinearLoss(), *ConvexBody::Ball(2, 1.0),
                               {1.0, 0.0}, options, rng),
              HasKind(ErrorKind::kPreconditionViolation));
}

TEST(ExpMechEfficientTest, HeuristicOutputInBodyAndLabelled) {
  std::mt19937_64 rng(9);
  Dataset data = Copies(Vec({0.5, -0.5}), 5);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  SamplerOptions options;
  options.mode = SamplerMode::kHeuristic;
  options.cells_per_axis_override = 8;
  options.steps_override = 200;
  for (int i = 0; i < 20; ++i) {
    MechanismOutput out =
        *ExpMechEfficient(data, LinearLoss(), ball, {1.0, 0.0}, options, rng);
    EXPECT_TRUE(ball.Contains(out.theta));
    EXPECT_FALSE(out.audit.is_private);
  }
}

TEST(GammaNormNoiseTest, MeanNorm) {
  std::mt19937_64 rng(10);
  // p = 5, scale 2L/(nΔε) = 0.02.
  const int draws = 100000;
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) sum += GammaNormNoise(5, 0.02, rng).norm();
  EXPECT_NEAR(sum / draws, 0.1, 0.001);
}

TEST(GammaNormNoiseTest, TailCoverage) {
  std::mt19937_64 rng(11);
  // ζ = 3: Pr(‖b‖ ≤ 3·p·scale) ≥ 1 − e^{−3}.
  const int draws = 10000;
  int inside = 0;
  for (int i = 0; i < draws; ++i) {
    if (GammaNormNoise(5, 0.02, rng).norm() <= 0.3) ++inside;
  }
  EXPECT_GE(static_cast<double>(inside) / draws, 0.95);
}

TEST(OutPertTest, ZeroNoiseCentersOnOptimum) {
  std::mt19937_64 rng(12);
  Dataset data = RandomDataset(100, 3, 0.7, rng);
  ConvexBody ball = *ConvexBody::Ball(3, 1.0);
  OutPertOptions options;
  options.zero_noise = true;
  OutPertResult res =
      *OutPert(data, SquaredDistanceLoss(), ball, 1.0, 3.0, rng, options);
  EXPECT_TRUE(res.theta0.isApprox(res.theta_star));
  EXPECT_TRUE(res.region.Contains(res.theta_star));
  EXPECT_NEAR(res.radius, 3.0 * 2.0 * 3 / 100.0, 1e-15);
}

TEST(OutPertTest, RequiresStrongConvexity) {
  std::mt19937_64 rng(13);
  Dataset data = Copies(Vec({0.5}), 3);
  EXPECT_THAT(OutPert(data, LinearLoss(), *ConvexBody::Box(Vec({1})), 1.0,
                      3.0, rng),
              HasKind(ErrorKind::kPreconditionViolation));
}

TEST(LocalizedTest, RegionDiameterAndBudget) {
  std::mt19937_64 rng(14);
  const int n = 100;
  Dataset data = RandomDataset(n, 2, 0.8, rng);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  for (int i = 0; i < 5; ++i) {
    MechanismOutput out = *LocalizedExpMech(data, SquaredDistanceLoss(), ball,
                                            {1.0, 0.0}, {}, rng);
    EXPECT_TRUE(ball.Contains(out.theta));
    // Radius at the ε/2 stage.
    double bound = 2.0 * (3.0 * std::log(n)) * 2.0 * 2 / (0.5 * n);
    EXPECT_LE(AuditValue(out.audit, "region_diameter"), bound + 1e-12);
    EXPECT_TRUE(BudgetWithinDeclared(out.audit));
    EXPECT_TRUE(out.audit.is_private);
  }
}

TEST(GaussianLocalizationTest, RadiusFrozenValue) {
  // √(3 ln 100)·(2√(ln 10⁵)/100)·2, 30-digit evaluation.
  const double kFrozen = 0.5044711184031878;
  double oracle = std::sqrt(3 * std::log(100.0)) *
                  (2 * std::sqrt(std::log(1e5)) / 100) * 2;
  EXPECT_NEAR(oracle, kFrozen, 1e-15);
  EXPECT_NEAR(GaussianLocalizationRadius(1, 1, 100, 1, 1e-5, 4), kFrozen,
              1e-14);
}

TEST(GaussianLocalizationTest, ZeroNoiseRegionContainsOptimum) {
  std::mt19937_64 rng(15);
  Dataset data = RandomDataset(100, 2, 0.6, rng);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  GaussLocalizeOptions options;
  options.zero_noise = true;
  options.inner = GaussInner::kExpMechExact;
  SolverResult opt = *Minimize(SquaredDistanceLoss(), data, ball);
  MechanismOutput out = *GaussOutPertLocalize(data, SquaredDistanceLoss(), ball,
                                              {1.0, 1e-5}, options, rng);
  double radius = AuditValue(out.audit, "region_radius");
  EXPECT_LE((out.theta - opt.theta).norm(), radius + 1e-9);
  EXPECT_FALSE(out.audit.is_private);
  EXPECT_TRUE(BudgetWithinDeclared(out.audit));
  EXPECT_GT(AuditValue(out.audit, "gaussian_stage_exact_delta"), 0.0);
}

TEST(ObjectivePerturbationTest, ZeroNoiseTestOnlyReturnsOptimum) {
  std::mt19937_64 rng(16);
  Dataset data = RandomDataset(50, 2, 0.7, rng);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  ObjPertOptions options;
  options.zero_noise = true;
  options.test_only = true;
  LossFunction loss = HuberizedHingeLoss(0.1);
  for (Record& r : data.records) {
    r.y = r.x(0) > 0 ? 1.0 : -1.0;
    r.has_label = true;
  }
  MechanismOutput out = *ObjectivePerturbation(data, loss, ball, 0.0,
                                               {1.0, 0.0}, options, rng);
  SolverResult opt = *Minimize(loss, data, ball);
  EXPECT_NEAR(internal::SumLoss(loss, out.theta, data), opt.value, 1e-6);
  EXPECT_FALSE(out.audit.is_private);
}

TEST(ObjectivePerturbationTest, RegularizerBelowThresholdRejected) {
  std::mt19937_64 rng(17);
  Dataset data;
  data.records.push_back(Record{Vec({0.5}), 1.0, true});
  LossFunction loss = HuberizedHingeLoss(0.1);  // β = 5
  EXPECT_THAT(ObjectivePerturbation(data, loss, *ConvexBody::Box(Vec({1})),
                                    1.0, {1.0, 0.0}, {}, rng),
              HasKind(ErrorKind::kPreconditionViolation));
  MechanismOutput ok = *ObjectivePerturbation(
      data, loss, *ConvexBody::Box(Vec({1})), 2.5, {1.0, 0.0}, {}, rng);
  EXPECT_TRUE(ok.audit.is_private);
  EXPECT_THAT(ok.audit.notes,
              ::testing::Contains("regime: smooth-lipschitz/gamma"));
}

TEST(ObjectivePerturbationTest, GaussianNoiseSecondMoment) {
  std::mt19937_64 rng(18);
  Dataset data = Copies(Vec({0.3, 0.1, 0.0, 0.0, 0.0}), 2);
  ConvexBody ball = *ConvexBody::Ball(5, 1.0);
  ObjPertOptions options;
  options.noise = ObjPertNoise::kGaussian;
  const double eps = 1.0, delta = 1e-5;
  const int runs = 4000;
  double sum = 0.0;
  for (int i = 0; i < runs; ++i) {
    MechanismOutput out = *ObjectivePerturbation(
        data, SquaredDistanceLoss(), ball, 0.0, {eps, delta}, options, rng);
    double norm = AuditValue(out.audit, "noise_norm");
    sum += norm * norm;
  }
  // χ²₅ relative sd √(2/5) per draw; 4000 runs give a 1% standard error.
  const double want = 5 * 8.0 * std::log(1 / delta) / (eps * eps);
  EXPECT_NEAR(sum / runs / want, 1.0, 0.04);
}

TEST(BoostingTest, SingleRunReturnsCandidate) {
  std::mt19937_64 rng(19);
  Dataset data = Copies(Vec({0.1}), 4);
  ConvexBody interval = *ConvexBody::Box(Vec({1}));
  EXPECT_EQ(BoostRuns(0.9), 1);
  MechanismFn<std::mt19937_64> fixed = [](const PrivacyParams&,
                                          std::mt19937_64&)
      -> absl::StatusOr<MechanismOutput> {
    PrivacyAudit audit;
    audit.AddStage("fixed", 1, 1);
    return MechanismOutput{Vec({0.25}), audit};
  };
  MechanismOutput out = *BoostHighProb(fixed, data, LinearLoss(), interval,
                                       {1.0, 0.0}, 0.9, rng);
  EXPECT_EQ(out.theta(0), 0.25);
  EXPECT_TRUE(BudgetWithinDeclared(out.audit));
}

TEST(BoostingTest, EqualUtilitiesSelectUniformly) {
  std::mt19937_64 rng(20);
  std::vector<int> counts(3, 0);
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    ++counts[FiniteExpMech({-2.0, -2.0, -2.0}, 1.0, 1.0, rng)];
  }
  for (int c : counts) EXPECT_NEAR(c / static_cast<double>(draws), 1.0 / 3, 0.015);
}

TEST(BoostingTest, RunCountAndBudget) {
  EXPECT_EQ(BoostRuns(0.05), 4);
  std::mt19937_64 rng(21);
  Dataset data = RandomDataset(50, 2, 0.8, rng);
  MechanismConfig config;
  config.id = MechanismId::kBoosted;
  config.boosted = MechanismId::kObjectivePerturbation;
  config.privacy = {1.0, 0.0};
  MechanismOutput out = *RunMechanism(config, data, SquaredDistanceLoss(),
                                      *ConvexBody::Ball(2, 1.0), rng);
  EXPECT_TRUE(BudgetWithinDeclared(out.audit));
  EXPECT_EQ(AuditValue(out.audit, "runs"), 4.0);
}

TEST(DispatchTest, NamesRoundTrip) {
  for (const char* name :
       {"noise-gd", "noise-gd-debug", "exp-exact", "exp-efficient",
        "localized", "gauss-localized", "objpert", "boosted"}) {
    EXPECT_EQ(MechanismName(*ParseMechanismId(name)), name);
  }
  EXPECT_THAT(ParseMechanismId("nope"), HasKind(ErrorKind::kInvalidArgument));
}

TEST(DispatchTest, SameSeedSameBitsAndFeasible) {
  std::mt19937_64 data_rng(22);
  Dataset data = RandomDataset(40, 2, 0.8, data_rng);
  ConvexBody ball = *ConvexBody::Ball(2, 1.0);
  for (MechanismId id :
       {MechanismId::kNoiseGd, MechanismId::kExpMechExact,
        MechanismId::kLocalized, MechanismId::kGaussLocalized,
        MechanismId::kObjectivePerturbation}) {
    MechanismConfig config;
    config.id = id;
    config.privacy = {1.0, 1e-5};
    std::mt19937_64 a(99), b(99);
    MechanismOutput x = *RunMechanism(config, data, SquaredDistanceLoss(),
                                      ball, a);
    MechanismOutput y = *RunMechanism(config, data, SquaredDistanceLoss(),
                                      ball, b);
    EXPECT_EQ(x.theta, y.theta) << MechanismName(id);
    EXPECT_LE(x.theta.norm(), 1.0 + 1e-9) << MechanismName(id);
    EXPECT_TRUE(BudgetWithinDeclared(x.audit)) << MechanismName(id);
  }
}

}  // namespace
}  // namespace dp_erm
