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

#include "dp_erm/acceptance.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "boost/math/distributions/normal.hpp"
#include "boost/multiprecision/cpp_bin_float.hpp"
#include "dp_erm/geometry.h"
#include "dp_erm/harness.h"
#include "dp_erm/losses.h"
#include "dp_erm/lowerbounds.h"
#include "dp_erm/mechanisms.h"
#include "dp_erm/privacy.h"
#include "dp_erm/sampler.h"
#include "dp_erm/solver.h"
#include "dp_erm/status.h"

namespace dp_erm {
namespace {

using Big = boost::multiprecision::cpp_bin_float_50;

// Collects sub-checks; a criterion passes only if every check does.
class Report {
 public:
  explicit Report(CriterionResult* result) : result_(result) {}

  bool Check(bool ok, const std::string& line) {
    result_->pass = result_->pass && ok;
    result_->details.push_back(absl::StrCat(ok ? "ok    " : "FAIL  ", line));
    return ok;
  }
  void Info(const std::string& line) {
    result_->details.push_back(absl::StrCat("info  ", line));
  }

 private:
  CriterionResult* result_;
};

std::string Num(double v) { return absl::StrFormat("%.6g", v); }

uint64_t CriterionSeed(const AcceptanceOptions& options, int id) {
  return MixSeed(options.seed ^ (0x100u * static_cast<uint64_t>(id)));
}

Vector RandomGaussian(int p, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(p);
  for (int j = 0; j < p; ++j) v(j) = scale * normal(rng);
  return v;
}

Vector Point(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  int i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

// Two-sided z quantile at confidence 1 − alpha, split over `tests` cells.
double BonferroniZ(double alpha, int tests) {
  boost::math::normal standard;
  return boost::math::quantile(standard, 1.0 - alpha / (2.0 * tests));
}

// Smallest power of two t with max_u Dist∞(e_u Pᵗ, π) ≤ target, or −1.
int64_t CertifiedSteps(const GridWalkSpec& spec, double target) {
  absl::StatusOr<Eigen::MatrixXd> matrix = TransitionMatrix(spec);
  absl::StatusOr<StationaryDistribution> stat = StationaryOracle(spec);
  if (!matrix.ok() || !stat.ok()) return -1;
  Eigen::MatrixXd power = *matrix;
  for (int64_t t = 1; t < (int64_t{1} << 40); t *= 2) {
    double worst = 0.0;
    for (Eigen::Index u = 0; u < power.rows(); ++u) {
      worst = std::max(worst, DistInf(power.row(u).transpose(), stat->pi));
    }
    if (worst <= target) return t;
    power = power * power;
  }
  return -1;
}

struct WalkVerdict {
  double worst = 0.0;
  double balance = 0.0;
};

WalkVerdict AnalyzeWalk(const GridWalkSpec& spec) {
  WalkVerdict verdict;
  StationaryDistribution stat = *StationaryOracle(spec);
  Eigen::MatrixXd P = *TransitionMatrix(spec);
  Eigen::MatrixXd Pt = MatrixPower(P, spec.steps);
  for (Eigen::Index u = 0; u < Pt.rows(); ++u) {
    verdict.worst =
        std::max(verdict.worst, DistInf(Pt.row(u).transpose(), stat.pi));
  }
  for (Eigen::Index u = 0; u < P.rows(); ++u) {
    for (Eigen::Index v = u + 1; v < P.cols(); ++v) {
      double forward = stat.pi[u] * P(u, v);
      double backward = stat.pi[v] * P(v, u);
      verdict.balance = std::max(verdict.balance, std::abs(forward - backward));
    }
  }
  return verdict;
}

ConvexFunction LinearFirstCoordinate(int p, double slope) {
  return ConvexFunction{
      [slope](const Vector& x) { return slope * x(0); },
      [slope, p](const Vector&) {
        Vector g = Vector::Zero(p);
        g(0) = slope;
        return g;
      }};
}

// ---------------------------------------------------------------------------
// 1. Geometry and loss correctness.

struct NamedBody {
  std::string name;
  ConvexBody body;
};

std::vector<NamedBody> TestBodies() {
  std::vector<NamedBody> bodies;
  bodies.push_back({"ball(3,1.5)", *ConvexBody::Ball(3, 1.5)});
  bodies.push_back({"box(1,0.5,2)", *ConvexBody::Box(Point({1.0, 0.5, 2.0}))});
  bodies.push_back(
      {"box2-offset",
       *ConvexBody::Box(Point({0.1, -0.1}), Point({1.0, 0.7}))});
  bodies.push_back({"ball-cap-intersection",
                    *IntersectBall(*ConvexBody::Ball(3, 1.0),
                                   Point({0.3, -0.2, 0.1}), 0.9)});
  return bodies;
}

struct KinkedLoss {
  LossFunction loss;
  // Distance-like measure to the nearest nondifferentiable point; samples
  // with a value below kKinkGap are skipped.
  std::function<double(const Vector&, const Record&)> kink_distance;
};

constexpr double kKinkGap = 1e-4;

std::vector<KinkedLoss> TestLosses() {
  auto none = [](const Vector&, const Record&) {
    return std::numeric_limits<double>::infinity();
  };
  auto hinge_kink = [](HingeForm form) {
    return [form](const Vector& theta, const Record& d) {
      return std::abs(internal::HingeArgument(form, theta, d));
    };
  };
  auto huber_kink = [](HingeForm form, double h) {
    return [form, h](const Vector& theta, const Record& d) {
      double z = internal::HingeArgument(form, theta, d);
      return std::min(std::abs(z - h), std::abs(z + h));
    };
  };
  std::vector<KinkedLoss> losses;
  losses.push_back({LinearLoss(), none});
  losses.push_back({SquaredDistanceLoss(), none});
  losses.push_back({HingeLoss(1.0, HingeForm::kMargin),
                    hinge_kink(HingeForm::kMargin)});
  losses.push_back({HingeLoss(1.0, HingeForm::kResidual),
                    hinge_kink(HingeForm::kResidual)});
  losses.push_back({HuberizedHingeLoss(0.1, 1.0, HingeForm::kMargin),
                    huber_kink(HingeForm::kMargin, 0.1)});
  losses.push_back({HuberizedHingeLoss(0.05, 1.0, HingeForm::kResidual),
                    huber_kink(HingeForm::kResidual, 0.05)});
  losses.push_back({EuclideanMedianLoss(),
                    [](const Vector& theta, const Record& d) {
                      return (theta - d.x).norm();
                    }});
  losses.push_back(
      {RegularizedLoss(HuberizedHingeLoss(0.1), 0.5, 1, 1.0),
       huber_kink(HingeForm::kMargin, 0.1)});
  return losses;
}

Record RandomRecord(int p, std::mt19937_64& rng) {
  Record d;
  d.x = UniformBallSample(p, rng);
  d.y = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  d.has_label = true;
  return d;
}

CriterionResult GeometryAndLosses(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  std::mt19937_64 rng(CriterionSeed(options, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int kPerBody = 500;
  const int kPerLoss = 250;

  int64_t cases = 0;
  int projection_bad = 0, gauge_bad = 0, body_convex_bad = 0;
  double worst_vi = 0.0, worst_gauge = 0.0;
  for (const NamedBody& nb : TestBodies()) {
    const ConvexBody& body = nb.body;
    const int p = body.dimension();
    for (int i = 0; i < kPerBody; ++i) {
      // Projection: Πx ∈ C and ⟨x − Πx, y − Πx⟩ ≤ 0 for y ∈ C.
      Vector x = RandomGaussian(p, 2.0, rng);
      Vector px = body.oracle().Project(x);
      Vector y = body.oracle().Project(RandomGaussian(p, 1.0, rng));
      double vi = (x - px).dot(y - px);
      double scale = 1.0 + (x - px).norm() * (y - px).norm();
      worst_vi = std::max(worst_vi, vi / scale);
      if (!body.Contains(px) || vi > 1e-7 * scale) ++projection_bad;

      // Gauge: ψ(tx) = tψ(x) for t > 0.
      Vector g = RandomGaussian(p, 1.0, rng);
      double t = 0.1 + 4.9 * unit(rng);
      double psi = *Gauge(body, g);
      double psi_t = *Gauge(body, t * g);
      double err = std::abs(psi_t - t * psi) / std::max(1.0, t * psi);
      worst_gauge = std::max(worst_gauge, err);
      if (err > 1e-8) ++gauge_bad;

      // Body convexity: midpoints of members are members.
      Vector a = body.oracle().Project(RandomGaussian(p, 2.0, rng));
      Vector b = body.oracle().Project(RandomGaussian(p, 2.0, rng));
      if (!body.Contains(0.5 * (a + b))) ++body_convex_bad;
      cases += 3;
    }
  }
  report.Check(projection_bad == 0,
               absl::StrCat("projection optimality: ", projection_bad,
                            " violations; worst scaled <x-Px,y-Px> = ",
                            Num(worst_vi)));
  report.Check(gauge_bad == 0,
               absl::StrCat("gauge homogeneity: ", gauge_bad,
                            " violations; worst rel err = ", Num(worst_gauge)));
  report.Check(body_convex_bad == 0,
               absl::StrCat("body midpoint membership: ", body_convex_bad,
                            " violations"));

  const int p = 3;
  const double h = 1e-6;
  int fd_bad = 0, fd_skipped = 0, fd_checked = 0, midpoint_bad = 0;
  double worst_fd = 0.0;
  std::string worst_loss;
  for (const KinkedLoss& kl : TestLosses()) {
    const LossFunction& loss = kl.loss;
    for (int i = 0; i < kPerLoss; ++i) {
      Vector theta = UniformBallSample(p, rng);
      Record d = RandomRecord(p, rng);
      if (kl.kink_distance(theta, d) < kKinkGap) {
        ++fd_skipped;
      } else {
        Vector g = Vector::Zero(p);
        loss.add_subgradient(theta, d, 1.0, &g);
        Vector fd(p);
        for (int j = 0; j < p; ++j) {
          Vector e = Vector::Unit(p, j) * h;
          fd(j) = (loss.value(theta + e, d) - loss.value(theta - e, d)) /
                  (2.0 * h);
        }
        double err = (fd - g).norm() / std::max(1.0, g.norm());
        if (err > worst_fd) {
          worst_fd = err;
          worst_loss = loss.name;
        }
        if (err > 1e-5) ++fd_bad;
        ++fd_checked;
      }
      Vector a = UniformBallSample(p, rng) * 1.5;
      Vector b = UniformBallSample(p, rng) * 1.5;
      double mid = loss.value(0.5 * (a + b), d);
      double avg = 0.5 * (loss.value(a, d) + loss.value(b, d));
      if (mid > avg + 1e-12 * (1.0 + std::abs(avg))) ++midpoint_bad;
      cases += 2;
    }
  }
  report.Check(fd_bad == 0,
               absl::StrCat("subgradient finite differences: ", fd_bad, "/",
                            fd_checked, " above rel 1e-5; worst ",
                            Num(worst_fd), " (", worst_loss, ")"));
  report.Check(fd_skipped * 10 < fd_checked,
               absl::StrCat("finite-difference samples within ", kKinkGap,
                            " of a kink skipped: ", fd_skipped));
  report.Check(midpoint_bad == 0,
               absl::StrCat("loss midpoint convexity: ", midpoint_bad,
                            " violations"));
  report.Check(cases >= 1000 && cases <= 10000,
               absl::StrCat("randomized cases: ", cases));
  return result;
}

// ---------------------------------------------------------------------------
// 2. Privacy calculators.

Big BigLog(const Big& x) { return boost::multiprecision::log(x); }

double RelErr(double got, const Big& want) {
  Big diff = boost::multiprecision::abs(Big(got) - want);
  return static_cast<double>(diff / boost::multiprecision::abs(want));
}

CriterionResult PrivacyCalculators(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);

  // σ² on a 100-point grid.
  {
    const double ls[] = {0.5, 1.0, 2.0, 4.0, 10.0};
    const int64_t ns[] = {10, 1000, 100000, 10000000};
    const double eps[] = {0.1, 0.5, 1.0, 2.0, 5.0};
    const double deltas[] = {1e-3, 1e-5, 1e-8, 1e-12};
    double worst = 0.0;
    int points = 0;
    for (int a = 0; a < 5; ++a) {
      for (int b = 0; b < 4; ++b) {
        for (int c = 0; c < 5; ++c) {
          double delta = deltas[(a + b + c) % 4];
          Big l(ls[a]), n(ns[b]), e(eps[c]), dl(delta);
          Big want = 32 * l * l * n * n * BigLog(n / dl) * BigLog(1 / dl) /
                     (e * e);
          double got = *NoiseGdSigmaSq(ls[a], ns[b], eps[c], delta);
          worst = std::max(worst, RelErr(got, want));
          ++points;
        }
      }
    }
    report.Check(points == 100 && worst <= 1e-12,
                 absl::StrCat("sigma^2 vs 50-digit oracle: ", points,
                              " points, worst rel err ", Num(worst)));
  }

  // Strong composition on a 100-point grid.
  {
    const double steps_eps[] = {1e-4, 1e-3, 0.01, 0.1, 0.5};
    const int64_t ts[] = {1, 10, 1000, 1000000};
    const double dps[] = {0.1, 1e-3, 1e-5, 1e-8, 1e-12};
    double worst = 0.0;
    int points = 0;
    for (double e : steps_eps) {
      for (int64_t t : ts) {
        for (double dp : dps) {
          Big be(e), bt(t), bd(dp);
          Big want = boost::multiprecision::sqrt(2 * bt * BigLog(1 / bd)) * be +
                     bt * be * (boost::multiprecision::exp(be) - 1);
          double got = *StrongComposition(e, t, dp);
          worst = std::max(worst, RelErr(got, want));
          ++points;
        }
      }
    }
    report.Check(points == 100 && worst <= 1e-12,
                 absl::StrCat("strong composition vs 50-digit oracle: ",
                              points, " points, worst rel err ", Num(worst)));
  }

  // Amplification on a 100-point grid.
  {
    double worst = 0.0;
    int points = 0;
    for (int i = 1; i <= 10; ++i) {
      for (int j = 1; j <= 10; ++j) {
        double e = i / 10.0;
        double gamma = j / 11.0;
        Big want = 2 * Big(gamma) * Big(e);
        double got = *SubsampleAmplification(e, gamma);
        worst = std::max(worst, RelErr(got, want));
        ++points;
      }
    }
    report.Check(points == 100 && worst <= 1e-12,
                 absl::StrCat("subsample amplification vs 50-digit oracle: ",
                              points, " points, worst rel err ", Num(worst)));
  }

  // The Noise-GD chain at the analysed calibration and at half of it.
  {
    int points = 0, pass_at_calibration = 0, fail_at_half = 0;
    double worst_total = 0.0, worst_factor = 0.0;
    for (int64_t n : {100, 1000, 10000}) {
      for (double eps : {0.1, 0.5, 1.0}) {
        for (double delta : {1e-5, 1e-8}) {
          double sigma_sq = *NoiseGdSigmaSq(1.0, n, eps, delta);
          if (options.halve_sigma_sq) sigma_sq /= 2.0;
          ++points;
          absl::StatusOr<NoiseGdAudit> at =
              NoiseGdPrivacyCheck(1.0, n, eps, delta, sigma_sq);
          if (at.ok()) ++pass_at_calibration;
          NoiseGdAudit audit =
              *ComputeNoiseGdAudit(1.0, n, eps, delta, sigma_sq);
          worst_total = std::max(worst_total, audit.total_epsilon / eps);
          worst_factor = std::max(worst_factor, audit.sigma_sq_factor_needed);
          absl::StatusOr<NoiseGdAudit> half =
              NoiseGdPrivacyCheck(1.0, n, eps, delta, sigma_sq / 2.0);
          if (HasErrorKind(half.status(), ErrorKind::kCalibrationBug)) {
            ++fail_at_half;
          }
        }
      }
    }
    if (options.halve_sigma_sq) {
      report.Info("calibration replaced by sigma^2/2 (corruption run)");
    }
    report.Check(pass_at_calibration == points,
                 absl::StrCat("privacy check passes at calibration: ",
                              pass_at_calibration, "/", points,
                              "; worst composed total = ", Num(worst_total),
                              " x epsilon; sigma^2 factor needed up to ",
                              Num(worst_factor)));
    report.Check(fail_at_half == points,
                 absl::StrCat("privacy check fails at sigma^2/2: ",
                              fail_at_half, "/", points));
  }
  return result;
}

// ---------------------------------------------------------------------------
// 3. Sampler exactness.

CriterionResult SamplerExactness(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  ConvexBody interval = *ConvexBody::Ball(1, 1.0);

  // Walks run by the init sampler on [−1, 1]; the walk accuracy is half of
  // the sampler's, so sampler accuracies 0.5 and 1 give walk ε̃ 0.25, 0.5.
  for (double init_eps : {0.5, 1.0}) {
    for (double slope : {0.0, 1.0}) {
      InitSampler init = *InitSampler::Create(
          interval, LinearFirstCoordinate(1, slope), slope, init_eps);
      const GridWalkSpec& spec = init.spec();
      WalkVerdict v = AnalyzeWalk(spec);
      std::string tag = absl::StrCat(
          "1-D init walk, f = ", slope == 0.0 ? "0" : "theta",
          ", eps~ = ", Num(spec.eps_tilde), ", ", spec.total_cells(),
          " cells, t = ", spec.steps);
      report.Check(spec.total_cells() <= 1000 &&
                       v.worst <= spec.eps_tilde / 2.0,
                   absl::StrCat(tag, ": worst Dist_inf = ", Num(v.worst),
                                " (bound ", Num(spec.eps_tilde / 2.0), ")"));
      report.Check(v.balance <= 1e-15,
                   absl::StrCat(tag, ": detailed balance residual ",
                                Num(v.balance)));
    }
  }

  // Bare 2-D walks on [−1, 1]² with log F = −w·θ₁.
  for (double eps_tilde : {0.25, 0.5}) {
    for (double w : {0.0, 1.0}) {
      GridWalkSpec spec = *MakeGridWalkSpec(
          Vector::Constant(2, -1.0), Vector::Constant(2, 1.0),
          [w](const Vector& x) -> absl::StatusOr<double> { return -w * x(0); },
          1.0, eps_tilde);
      WalkVerdict v = AnalyzeWalk(spec);
      std::string tag = absl::StrCat("2-D walk, log F = -", Num(w),
                                     "*theta1, eps~ = ", Num(eps_tilde), ", ",
                                     spec.total_cells(), " cells, t = ",
                                     spec.steps);
      report.Check(spec.total_cells() <= 1000 && v.worst <= eps_tilde / 2.0,
                   absl::StrCat(tag, ": worst Dist_inf = ", Num(v.worst),
                                " (bound ", Num(eps_tilde / 2.0), ")"));
      report.Check(v.balance <= 1e-15,
                   absl::StrCat(tag, ": detailed balance residual ",
                                Num(v.balance)));
    }
  }

  // Bare 1-D walks have only 8-16 cells; reported, not counted.
  for (double eps_tilde : {0.25, 0.5}) {
    GridWalkSpec spec = *MakeGridWalkSpec(
        Vector::Constant(1, -1.0), Vector::Constant(1, 1.0),
        [](const Vector& x) -> absl::StatusOr<double> { return -x(0); }, 1.0,
        eps_tilde);
    WalkVerdict v = AnalyzeWalk(spec);
    report.Info(absl::StrCat("bare 1-D walk, eps~ = ", Num(eps_tilde), ", ",
                             spec.total_cells(), " cells, t = ", spec.steps,
                             ": worst Dist_inf = ", Num(v.worst),
                             " (t_inf constant 1 is too small here)"));
  }

  // Strict mode rejects a step override.
  {
    SamplerOptions bad;
    bad.steps_override = 1;
    auto spec = MakeGridWalkSpec(
        Vector::Constant(1, -1.0), Vector::Constant(1, 1.0),
        [](const Vector&) -> absl::StatusOr<double> { return 0.0; }, 1.0, 0.5,
        bad);
    report.Check(HasErrorKind(spec.status(),
                              ErrorKind::kPreconditionViolation),
                 "strict steps_override = 1 rejected as non-private");
  }

  // Empirical eff_samp frequencies on [−1, 1] with f ≡ 0.
  {
    const double eps_tilde = 0.5;
    const int samples = 100000;
    const int bins = 20;
    EffSampler sampler = *EffSampler::Create(
        interval, LinearFirstCoordinate(1, 0.0), 0.0, eps_tilde);
    std::mt19937_64 rng(CriterionSeed(options, 3));
    std::vector<int> counts(bins, 0);
    for (int i = 0; i < samples; ++i) {
      Vector x = *sampler.Sample(rng);
      int b = static_cast<int>((x(0) + 1.0) * bins / 2.0);
      ++counts[std::clamp(b, 0, bins - 1)];
    }
    const double z = BonferroniZ(0.01, bins);
    const double mass = 1.0 / bins;
    double worst_excess = -std::numeric_limits<double>::infinity();
    double worst_log = 0.0;
    for (int b = 0; b < bins; ++b) {
      double freq = static_cast<double>(counts[b]) / samples;
      double log_ratio = std::abs(std::log(freq / mass));
      double tol = eps_tilde + z * std::sqrt((1.0 - mass) / (samples * mass));
      worst_log = std::max(worst_log, log_ratio);
      worst_excess = std::max(worst_excess, log_ratio - tol);
    }
    report.Check(worst_excess <= 0.0,
                 absl::StrCat("eff_samp, f = 0, eps~ = ", Num(eps_tilde), ", ",
                              samples, " samples, ", bins,
                              " bins: worst |log freq/target| = ",
                              Num(worst_log), " vs eps~ + ", Num(z),
                              " SE (99% Bonferroni); walk t = ",
                              sampler.init().spec().steps, ", fallbacks ",
                              sampler.stats().fallbacks));
  }
  return result;
}

// ---------------------------------------------------------------------------
// 4. init_samp in-body probability.

CriterionResult InitSampInBody(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  const int runs = 1000;
  const double eps_tilde = 0.5;
  std::mt19937_64 rng(CriterionSeed(options, 4));
  for (int p : {1, 2}) {
    ConvexBody ball = *ConvexBody::Ball(p, 1.0);
    for (double slope : {0.0, 1.0}) {
      // The strict p = 2 linear walk needs ~6e5 cells and ~4e7 steps per
      // sample; it runs on a coarse lattice with oracle-certified steps.
      const bool heuristic = p == 2 && slope > 0.0;
      SamplerOptions sampler_options;
      if (heuristic) {
        sampler_options.mode = SamplerMode::kHeuristic;
        sampler_options.cells_per_axis_override = 32;
        sampler_options.steps_override = 1;
        InitSampler probe = *InitSampler::Create(
            ball, LinearFirstCoordinate(p, slope), slope, eps_tilde,
            sampler_options);
        int64_t steps =
            CertifiedSteps(probe.spec(), probe.spec().eps_tilde / 2.0);
        if (!report.Check(steps > 0, "p = 2 linear: certified step count")) {
          continue;
        }
        sampler_options.steps_override = steps;
      }
      InitSampler sampler =
          *InitSampler::Create(ball, LinearFirstCoordinate(p, slope), slope,
                               eps_tilde, sampler_options);
      int inside = 0;
      for (int i = 0; i < runs; ++i) {
        inside += ball.Contains(*sampler.Sample(rng)) ? 1 : 0;
      }
      double rate = static_cast<double>(inside) / runs;
      report.Check(
          rate >= 0.45,
          absl::StrCat("p = ", p, ", f = ", slope == 0.0 ? "0" : "theta1",
                       heuristic ? " (heuristic, certified)" : " (strict)",
                       ": in-body rate ", Num(rate), " over ", runs,
                       " runs; cells ", sampler.spec().total_cells(),
                       ", t = ", sampler.spec().steps, ", alpha = ",
                       Num(sampler.alpha())));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// 5-10. Experiments.

absl::StatusOr<ExperimentResult> Run(ExperimentConfig config) {
  config.record_timing = false;
  return RunExperiment(config);
}

bool AllTrialsOk(const ExperimentResult& result) {
  for (const TrialRow& row : result.trials) {
    if (row.status != "ok") return false;
  }
  return true;
}

CriterionResult NoiseGdTrends(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  ExperimentConfig config;
  config.mechanism = "noise-gd";
  config.instance = "quadratic";
  config.rate = LearningRate::kStronglyConvex;
  config.n = {200, 400, 800};
  config.p = {2, 5};
  config.eps = {1.0};
  config.delta = {1e-5};
  config.trials = 100;
  config.seed = CriterionSeed(options, 5);
  absl::StatusOr<ExperimentResult> run = Run(config);
  if (!report.Check(run.ok(), "experiment ran")) return result;
  report.Check(AllTrialsOk(*run), "every trial completed");
  const LossFunction loss = SquaredDistanceLoss(1.0, 1.0);
  const double l = loss.lipschitz, strong = loss.strong_convexity;
  for (int p : config.p) {
    std::vector<const TrialRow*> rows;
    for (const TrialRow& agg : run->aggregates) {
      if (agg.point.p == p) rows.push_back(&agg);
    }
    for (const TrialRow* agg : rows) {
      const double n = static_cast<double>(agg->point.n);
      const double eps = agg->point.eps, delta = agg->point.delta;
      const double lg = std::log(n / delta);
      const double bound =
          l * l * lg * lg * p * std::log(1.0 / delta) / (n * strong * eps * eps);
      report.Check(agg->excess_risk <= 10.0 * bound,
                   absl::StrCat("p = ", p, ", n = ", agg->point.n,
                                ": mean excess ", Num(agg->excess_risk),
                                " +- ", Num(agg->stderr_value), " <= 10 x ",
                                Num(bound)));
    }
    int violations = 0;
    bool strict = true;
    for (size_t i = 1; i < rows.size(); ++i) {
      double prev = rows[i - 1]->excess_risk, cur = rows[i]->excess_risk;
      if (cur >= prev) strict = false;
      double se = std::hypot(rows[i - 1]->stderr_value, rows[i]->stderr_value);
      if (cur > prev + se) ++violations;
    }
    report.Check(violations == 0,
                 absl::StrCat("p = ", p, ": decreasing in n within one SE",
                              strict ? " (strictly decreasing)" : ""));
  }
  report.Info(
      "Noise-GD rows carry audit_ok = 0: the recomputed privacy chain at the "
      "analysed calibration exceeds epsilon (see criterion 2)");
  return result;
}

CriterionResult ExpMechUtility(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  ExperimentConfig config;
  config.mechanism = "exp-exact";
  config.instance = "linear";
  config.n = {100};
  config.p = {2};
  config.eps = {0.5, 1.0};
  config.trials = 200;
  config.seed = CriterionSeed(options, 6);
  absl::StatusOr<ExperimentResult> run = Run(config);
  if (!report.Check(run.ok(), "experiment ran")) return result;
  report.Check(AllTrialsOk(*run), "every trial completed");
  const double l = LinearLoss().lipschitz;
  const double diameter = ConvexBody::Ball(2, 1.0)->L2Diameter();
  for (const TrialRow& agg : run->aggregates) {
    const int p = agg.point.p;
    const double bound = (p * l * diameter / agg.point.eps) *
                         ((p + 1) * std::log(3.0) + 1.0);
    report.Check(agg.excess_risk <= 10.0 * bound,
                 absl::StrCat("eps = ", Num(agg.point.eps), ": mean excess ",
                              Num(agg.excess_risk), " +- ",
                              Num(agg.stderr_value), " <= 10 x ", Num(bound)));
  }

  // Efficient vs exact in 1-D. The efficient variant targets the exact
  // mechanism's law at ε/3, i.e. ∝ exp(−(ε/6L‖C‖₂)·L(θ;D)).
  const double eps = 1.0;
  const int samples = 4000;
  const int bins = 10;
  Dataset data;
  for (int i = 0; i < 2; ++i) {
    data.records.push_back(Record{Vector::Ones(1), 0.0, false});
  }
  LossFunction loss = LinearLoss();
  ConvexBody interval = *ConvexBody::Ball(1, 1.0);
  std::mt19937_64 rng(CriterionSeed(options, 6) + 1);
  EffSampler efficient =
      *MakeEfficientExpMechSampler(data, loss, interval, eps);
  ExactExpMechSampler exact = *ExactExpMechSampler::Create(
      data, loss, interval,
      ExpMechScale(loss, interval, eps / 3.0));
  std::vector<int> eff_counts(bins, 0), exact_counts(bins, 0);
  auto bin_of = [&](const Vector& x) {
    return std::clamp(static_cast<int>((x(0) + 1.0) * bins / 2.0), 0,
                      bins - 1);
  };
  for (int i = 0; i < samples; ++i) {
    ++eff_counts[bin_of(*efficient.Sample(rng))];
    ++exact_counts[bin_of(*exact.Sample(rng))];
  }
  const double z = BonferroniZ(0.01, bins);
  double worst = 0.0, worst_excess = -1e300;
  for (int b = 0; b < bins; ++b) {
    double fe = static_cast<double>(eff_counts[b]) / samples;
    double fx = static_cast<double>(exact_counts[b]) / samples;
    double log_ratio = std::abs(std::log(fe / fx));
    double se = std::sqrt((1.0 - fe) / eff_counts[b] +
                          (1.0 - fx) / exact_counts[b]);
    double tol = eps / 3.0 + 0.01 * eps + z * se;
    worst = std::max(worst, log_ratio);
    worst_excess = std::max(worst_excess, log_ratio - tol);
  }
  report.Check(worst_excess <= 0.0,
               absl::StrCat("efficient vs exact, 1-D, eps = ", Num(eps), ", ",
                            samples, " draws each, ", bins,
                            " bins: worst |log ratio| = ", Num(worst),
                            " vs eps/3 + 0.01 eps + ", Num(z), " SE; walk t = ",
                            efficient.init().spec().steps));
  return result;
}

CriterionResult Localization(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  ExperimentConfig config;
  config.instance = "quadratic";
  config.n = {500};
  config.p = {2};
  config.eps = {1.0};
  config.trials = 200;
  config.seed = CriterionSeed(options, 7);
  config.mechanism = "localized";
  absl::StatusOr<ExperimentResult> localized = Run(config);
  config.mechanism = "exp-exact";
  absl::StatusOr<ExperimentResult> plain = Run(config);
  if (!report.Check(localized.ok() && plain.ok(), "experiments ran")) {
    return result;
  }
  report.Check(AllTrialsOk(*localized) && AllTrialsOk(*plain),
               "every trial completed");
  const TrialRow& a = localized->aggregates[0];
  const TrialRow& b = plain->aggregates[0];
  report.Check(a.excess_risk < b.excess_risk,
               absl::StrCat("localized mean excess ", Num(a.excess_risk),
                            " +- ", Num(a.stderr_value), " < exp-exact ",
                            Num(b.excess_risk), " +- ", Num(b.stderr_value)));

  // Coverage of θ* by C₀ at n = 100: output perturbation at ε/2 with
  // ζ = 3 ln n.
  const int64_t n = 100;
  const int runs = 1000;
  const double eps = 1.0;
  const double zeta = 3.0 * std::log(static_cast<double>(n));
  std::mt19937_64 rng(CriterionSeed(options, 7) + 1);
  int covered = 0;
  for (int i = 0; i < runs; ++i) {
    HardInstance inst = *QuadraticInstance(n, 2, eps, rng);
    OutPertResult out =
        *OutPert(inst.data, inst.loss, inst.body, eps / 2.0, zeta, rng);
    if (out.region.Contains(out.theta_star)) ++covered;
  }
  double coverage = static_cast<double>(covered) / runs;
  report.Check(coverage >= 0.99,
               absl::StrCat("theta* in C0 at n = ", n, ": ", covered, "/",
                            runs, " = ", Num(coverage)));
  return result;
}

CriterionResult Huberization(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  std::vector<double> hs;
  for (int k = 0; k <= 16; ++k) hs.push_back(std::ldexp(1.0, -k));
  const int64_t ns[] = {3000, 30000};
  double best[2] = {0.0, 0.0};
  for (int i = 0; i < 2; ++i) {
    std::vector<double> worst(hs.size(), 0.0);
    for (const char* instance : {"huber-d1", "huber-d2"}) {
      ExperimentConfig config;
      config.mechanism = "objpert";
      config.instance = instance;
      config.noise = ObjPertNoise::kGaussian;
      config.n = {ns[i]};
      config.p = {1};
      config.eps = {0.5};
      config.delta = {1e-6};
      config.h = hs;
      config.trials = 50;
      config.seed = CriterionSeed(options, 8);
      absl::StatusOr<ExperimentResult> run = Run(config);
      if (!report.Check(run.ok() && AllTrialsOk(*run),
                        absl::StrCat(instance, " n = ", ns[i], " ran"))) {
        return result;
      }
      for (size_t k = 0; k < hs.size(); ++k) {
        worst[k] = std::max(worst[k], run->aggregates[k].excess_risk);
      }
    }
    size_t arg = static_cast<size_t>(
        std::min_element(worst.begin(), worst.end()) - worst.begin());
    best[i] = worst[arg];
    report.Info(absl::StrCat("n = ", ns[i],
                             ": min over h of max(D1, D2) mean excess = ",
                             Num(best[i]), " at h = 2^-", arg));
  }
  const double ratio = best[1] / best[0];
  const double lo = std::sqrt(10.0) / 1.5, hi = 1.5 * std::sqrt(10.0);
  report.Check(ratio >= lo && ratio <= hi,
               absl::StrCat("growth ratio ", Num(ratio), " in [", Num(lo),
                            ", ", Num(hi), "]"));
  return result;
}

CriterionResult LowerBoundEnvelope(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  for (const char* mechanism : {"objpert", "boosted"}) {
    ExperimentConfig config;
    config.mechanism = mechanism;
    config.boosted = "objpert";
    config.instance = "linear";
    config.n = {50, 100};
    config.p = {4, 8};
    config.eps = {0.5, 1.0};
    config.trials = 1000;
    config.seed = CriterionSeed(options, 9);
    absl::StatusOr<ExperimentResult> run = Run(config);
    std::string label = std::string(mechanism) == "boosted"
                            ? "boosted(objpert)"
                            : std::string(mechanism);
    if (!report.Check(run.ok() && AllTrialsOk(*run),
                      absl::StrCat(label, ": experiment ran"))) {
      continue;
    }
    double c_min = std::numeric_limits<double>::infinity(), c_max = 0.0;
    bool all_private = true;
    for (const TrialRow& agg : run->aggregates) {
      double scale = std::min(static_cast<double>(agg.point.n),
                              agg.point.p / agg.point.eps);
      double c = agg.excess_risk / scale;
      c_min = std::min(c_min, c);
      c_max = std::max(c_max, c);
      all_private = all_private && agg.is_private;
    }
    report.Check(all_private, absl::StrCat(label, ": every run is private"));
    // c_lb is the largest constant with mean ≥ c_lb·min(n, p/ε) everywhere.
    report.Check(c_max <= 4.0 * c_min,
                 absl::StrCat(label, ": fitted c_lb = ", Num(c_min),
                              ", per-point ratios span x", Num(c_max / c_min),
                              " (limit x4)"));
  }
  return result;
}

std::string CsvOf(const ExperimentResult& result) {
  std::ostringstream out;
  WriteExperimentCsv(result, false, out);
  return out.str();
}

CriterionResult DeterminismAndSchema(const AcceptanceOptions& options) {
  CriterionResult result;
  Report report(&result);
  struct Sweep {
    std::string mechanism;
    std::string instance;
  };
  for (const Sweep& sweep : {Sweep{"objpert", "quadratic"},
                             Sweep{"localized", "quadratic"},
                             Sweep{"exp-exact", "linear"},
                             Sweep{"noise-gd", "quadratic"}}) {
    ExperimentConfig config;
    config.mechanism = sweep.mechanism;
    config.instance = sweep.instance;
    config.n = {40, 80};
    config.p = {2};
    config.eps = {0.5, 1.0};
    config.trials = 4;
    config.seed = CriterionSeed(options, 10);
    absl::StatusOr<ExperimentResult> first = Run(config);
    absl::StatusOr<ExperimentResult> second = Run(config);
    config.threads = 3;
    absl::StatusOr<ExperimentResult> threaded = Run(config);
    if (!report.Check(first.ok() && second.ok() && threaded.ok(),
                      absl::StrCat(sweep.mechanism, ": sweeps ran"))) {
      continue;
    }
    std::string a = CsvOf(*first);
    report.Check(a == CsvOf(*second) && a == CsvOf(*threaded),
                 absl::StrCat(sweep.mechanism, " on ", sweep.instance,
                              ": repeat and 3-thread sweeps byte-identical (",
                              a.size(), " bytes)"));
    absl::Status schema = ValidateTrialCsv(a);
    report.Check(schema.ok(),
                 absl::StrCat(sweep.mechanism, ": CSV schema ",
                              schema.ok() ? "valid" : schema.ToString()));
  }
  // The validator must notice a damaged file.
  std::string header = std::string(kTrialCsvHeader) + "\n";
  report.Check(!ValidateTrialCsv(header + "trial,objpert,quadratic,1\n").ok(),
               "truncated row rejected by the schema validator");
  return result;
}

struct CriterionSpec {
  const char* name;
  double limit_seconds;
  CriterionResult (*run)(const AcceptanceOptions&);
};

const CriterionSpec kCriteria[kCriterionCount] = {
    {"geometry-loss-correctness", 30.0, GeometryAndLosses},
    {"privacy-calculators", 5.0, PrivacyCalculators},
    {"sampler-exactness", 600.0, SamplerExactness},
    {"init-samp-in-body", 600.0, InitSampInBody},
    {"noise-gd-utility-trend", 1200.0, NoiseGdTrends},
    {"exp-mech-utility", 1200.0, ExpMechUtility},
    {"localization", 900.0, Localization},
    {"huberization-growth", 600.0, Huberization},
    {"lower-bound-envelope", 900.0, LowerBoundEnvelope},
    {"determinism-schema", 60.0, DeterminismAndSchema},
};

}  // namespace

std::string VerdictLine(const CriterionResult& result) {
  return absl::StrFormat("criterion=%d verdict=%s seconds=%.2f limit=%.0f name=%s",
                         result.id, result.pass ? "PASS" : "FAIL",
                         result.seconds, result.limit_seconds, result.name);
}

CriterionResult RunCriterion(int id, const AcceptanceOptions& options) {
  if (id < 1 || id > kCriterionCount) {
    CriterionResult bad;
    bad.id = id;
    bad.name = "unknown";
    bad.pass = false;
    bad.details.push_back("FAIL  no such criterion");
    return bad;
  }
  const CriterionSpec& spec = kCriteria[id - 1];
  const auto start = std::chrono::steady_clock::now();
  CriterionResult result = spec.run(options);
  result.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  result.id = id;
  result.name = spec.name;
  result.limit_seconds = spec.limit_seconds;
  bool in_time = result.seconds < spec.limit_seconds;
  result.pass = result.pass && in_time;
  result.details.push_back(
      absl::StrCat(in_time ? "ok    " : "FAIL  ", "runtime ",
                   Num(result.seconds), " s (limit ", Num(spec.limit_seconds),
                   " s)"));
  return result;
}

std::vector<CriterionResult> RunAcceptanceSuite(
    const AcceptanceOptions& options, std::ostream& out) {
  std::vector<int> ids = options.only;
  if (ids.empty()) {
    for (int id = 1; id <= kCriterionCount; ++id) ids.push_back(id);
  }
  std::vector<CriterionResult> results;
  for (int id : ids) {
    CriterionResult result = RunCriterion(id, options);
    out << VerdictLine(result) << '\n';
    if (options.verbose) {
      for (const std::string& line : result.details) {
        out << "    " << line << '\n';
      }
    }
    out.flush();
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace dp_erm
