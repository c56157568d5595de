#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "prsrg/certify.hpp"
#include "prsrg/diagnostics.hpp"
#include "prsrg/problems.hpp"
#include "test_support.hpp"

using namespace prsrg;
using namespace testing_support;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::shared_ptr<RayleighObjective> diag210() { return make_rayleigh(3, 4, vec({2, 1, 0}), 0.0, 1); }

TssrgParams params(double eta, std::uint64_t m, std::uint64_t b, std::uint64_t B, double D,
                   std::uint64_t T) {
  TssrgParams p;
  p.eta = eta;
  p.m = m;
  p.b = b;
  p.B = B;
  p.D = D;
  p.T_max = T;
  return p;
}

}  // namespace

TEST(Lanczos, KnownDiagonalOperator) {
  const Vector d = vec({2, 1, -3});
  const auto res = lanczos_min([&](const Vector& z) { return Vector(d.cwiseProduct(z)); }, 3, 50, Rng(1));
  EXPECT_NEAR(res.lambda_min, -3.0, 1e-8);
  EXPECT_LE(res.iterations, 3u);
  EXPECT_NEAR(std::abs(res.eigenvector[2]), 1.0, 1e-8);
  EXPECT_FALSE(res.failed);
}

TEST(Lanczos, MatchesDenseEigensolver) {
  Rng rng(2);
  Matrix a(30, 30);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  a = 0.5 * (a + a.transpose()).eval();
  const auto res = lanczos_min([&](const Vector& z) { return Vector(a * z); }, 30, 50, Rng(3));
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  EXPECT_NEAR(res.lambda_min, es.eigenvalues()[0], 1e-8);
  EXPECT_LE((a * res.eigenvector - res.lambda_min * res.eigenvector).norm(), 1e-6);
}

TEST(Lanczos, BreakdownRestartsThenFlags) {
  // identity: every Krylov space is invariant after one vector
  const auto res = lanczos_min([](const Vector& z) { return z; }, 10, 50, Rng(4));
  EXPECT_NEAR(res.lambda_min, 1.0, 1e-12);
  EXPECT_EQ(res.restarts, 3u);
  EXPECT_TRUE(res.failed);
  // a single breakdown recovers
  const Vector d = vec({1, 1, -2, 5});
  const auto ok = lanczos_min([&](const Vector& z) { return Vector(d.cwiseProduct(z)); }, 4, 50, Rng(5));
  EXPECT_NEAR(ok.lambda_min, -2.0, 1e-10);
  EXPECT_FALSE(ok.failed);
}

TEST(FixSign, FirstNonzeroCoordinatePositive) {
  EXPECT_EQ(fix_sign(vec({0, -0.6, 0.8})), vec({0, 0.6, -0.8}));
  EXPECT_EQ(fix_sign(vec({0, 0.6, -0.8})), vec({0, 0.6, -0.8}));
}

TEST(Certify, RayleighLeadingEigenvectorPasses) {
  auto obj = diag210();
  const auto c = certify(obj, obj->manifold().point(vec({1, 0, 0})), 1e-3, 0.5);
  EXPECT_TRUE(c.passed);
  EXPECT_NEAR(c.lambda_min_estimate, 2.0, 1e-4);
}

TEST(Certify, RayleighSaddleFails) {
  auto obj = diag210();
  const auto c = certify(obj, obj->manifold().point(vec({0, 1, 0})), 1e-3, 0.5);
  EXPECT_FALSE(c.passed);
  EXPECT_NEAR(c.lambda_min_estimate, -2.0, 0.01);
  EXPECT_NEAR(std::abs(c.min_eigenvector[0]), 1.0, 1e-6);
  EXPECT_GT(c.min_eigenvector[0], 0.0);
}

TEST(Certify, LargeRayleighSaddleMatchesAnalytic) {
  auto obj = make_rayleigh(100, 1000, gap_spectrum(100, 1.0), 0.5, 1);
  const auto c = certify(obj, obj->manifold().point(obj->eigenvector(1)), 1e-3, 0.5);
  EXPECT_FALSE(c.passed);
  EXPECT_NEAR(c.lambda_min_estimate, obj->hessian_eigenvalues_at(1).minCoeff(), 0.01);
}

TEST(Certify, PsdQuadraticAtOriginPasses) {
  auto obj = make_quadratic(4, vec({0.5, 1, 2, 3}), 3, 0.2, 1);
  const auto c = certify(obj, obj->manifold().point(Vector::Zero(4)), 1e-8, 1e-3);
  EXPECT_TRUE(c.passed);
  EXPECT_NEAR(c.lambda_min_estimate, 0.5, 1e-6);
}

TEST(Certify, PassedMatchesDefinition) {
  auto obj = make_rayleigh(8, 10, gap_spectrum(8, 1.0), 0.3, 2, 3);
  Rng rng(6);
  for (int k = 0; k < 20; ++k) {
    const Vector x = k % 2 ? obj->eigenvector(k % 8) : random_on_sphere(8, rng);
    const auto c = certify(obj, obj->manifold().point(x), 0.1, 0.3);
    EXPECT_EQ(c.passed, c.grad_norm <= 0.1 && c.lambda_min_estimate >= -0.3 - c.lanczos_tolerance);
  }
}

TEST(Certify, ScaleConsistency) {
  auto base = make_rayleigh(10, 10, gap_spectrum(10, 1.0), 0.3, 2, 3);
  Rng rng(7);
  for (double kappa : {0.5, 2.0}) {
    auto scaled = std::make_shared<ScaledObjective>(base, kappa);
    for (int k = 0; k < 10; ++k) {
      const Vector x = k < 5 ? base->eigenvector(k) : random_on_sphere(10, rng);
      const double eps = 0.3, delta = 0.5;
      const auto a = certify(base, base->manifold().point(x), eps, delta);
      const auto b = certify(scaled, scaled->manifold().point(x), kappa * eps, kappa * delta);
      EXPECT_NEAR(b.grad_norm, kappa * a.grad_norm, 1e-10);
      EXPECT_NEAR(b.lambda_min_estimate, kappa * a.lambda_min_estimate, 1e-6);
      EXPECT_EQ(a.passed, b.passed);
    }
  }
}

TEST(Certify, HessianClauseSkippedWhenDeltaExceedsEll) {
  auto obj = diag210();
  CertifyOptions opt;
  opt.ell = 1.0;
  const auto c = certify(obj, obj->manifold().point(vec({0, 1, 0})), 1e-3, 1.5, opt);
  EXPECT_TRUE(c.hessian_skipped);
  EXPECT_TRUE(c.passed);
}

TEST(VarianceBound, FullBatchRatioIsZero) {
  auto obj = make_rayleigh(10, 16, gap_spectrum(10, 1.0), 0.6, 3, 4);
  Rng rng(8);
  const auto& mf = obj->manifold();
  PullbackOracle o(obj, mf.point(random_on_sphere(10, rng)));
  TssrgOptions opt;
  opt.record = true;
  opt.exact_gap = true;
  const auto out = tssrg_run(o, Vector::Zero(10), params(0.05, 8, 16, 16, 0.5, 8), Rng(1), opt);
  const auto rep = check_variance_bound(out.steps, 3.0, 16, 16);
  EXPECT_LE(rep.sup_ratio, 1e-7);
  EXPECT_GT(rep.steps_checked, 0u);
}

TEST(VarianceBound, MissingGapsAreSchemaError) {
  std::vector<StepRecord> steps(2);
  steps[0].event = StepEvent::Anchor;
  EXPECT_THROW(check_variance_bound(steps, 1.0, 4, 4), SchemaError);
}

TEST(VarianceBound, KnownRatio) {
  std::vector<StepRecord> steps(3);
  steps[0].event = StepEvent::Anchor;
  steps[0].estimator_gap = 0.0;
  steps[1].step_norm = 3.0;
  steps[1].estimator_gap = 1.5;
  steps[2].step_norm = 4.0;
  steps[2].estimator_gap = 2.0;
  // normalizers: (2/2)*3 = 3 and (2/2)*5 = 5
  const auto rep = check_variance_bound(steps, 2.0, 4, 4);
  EXPECT_DOUBLE_EQ(rep.sup_ratio, 0.5);
}

TEST(VarianceTrend, FlagsGrowth) {
  EXPECT_FALSE(variance_trend({1.0, 1.2, 1.1}).grows);
  EXPECT_TRUE(variance_trend({1.0, 1.7}).grows);
  EXPECT_NEAR(variance_trend({2.0, 1.0}).max_factor, 2.0, 1e-15);
}

TEST(OnlineAnchorGap, WithinChebyshevBound) {
  auto obj = std::make_shared<StreamingRayleighObjective>(8, gap_spectrum(8, 1.0), 5, 6);
  const std::uint64_t B = 2000;
  Rng rng(9);
  int within = 0, total = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const Vector x = random_on_sphere(8, rng);
    PullbackOracle o(obj, obj->manifold().point(x));
    TssrgOptions opt;
    opt.record = true;
    opt.exact_gap = true;
    const auto out = tssrg_run(o, Vector::Zero(8), params(0.01, 5, 5, B, 0.5, 20), Rng(s), opt);
    const auto rep = check_variance_bound(out.steps, 10.0, 5, B, obj->sigma_hint());
    for (double g : rep.anchor_gaps) {
      ++total;
      within += g <= 3.0 * obj->sigma_at(x) / std::sqrt(double(B)) + 1e-12;
    }
  }
  ASSERT_GE(total, 60);
  EXPECT_GE(within, static_cast<int>(std::ceil(0.95 * total)));
}

TEST(ImproveOrLocalize, StationaryRunHolds) {
  auto obj = diag210();
  PullbackOracle o(obj, obj->manifold().point(vec({0, 1, 0})));
  TssrgOptions opt;
  opt.record = true;
  const auto out = tssrg_run(o, Vector::Zero(3), params(0.1, 10, 4, 4, 0.5, 10), Rng(1), opt);
  const auto rep = check_improve_or_localize(out.steps, 2.0, 1.0);
  EXPECT_TRUE(rep.holds);
  EXPECT_TRUE(std::isinf(rep.c1_fit));
}

TEST(ImproveOrLocalize, QuadraticDescentFitIsStable) {
  Vector ev(6);
  for (int j = 0; j < 6; ++j) ev[j] = 0.5 + j;
  auto obj = make_quadratic(6, ev, 8, 0.0, 2);
  std::vector<double> fits;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    PullbackOracle o(obj, obj->manifold().point(gaussian(6, rng)));
    TssrgOptions opt;
    opt.record = true;
    const auto out = tssrg_run(o, Vector::Zero(6), params(0.05, 30, 8, 8, 1e9, 30), Rng(s), opt);
    const auto rep = check_improve_or_localize(out.steps, 5.5, 1.0);
    EXPECT_GT(rep.c1_fit, 0.0);
    EXPECT_TRUE(std::isfinite(rep.c1_fit));
    EXPECT_EQ(rep.increasing_steps, 0u);
    fits.push_back(rep.c1_fit);
  }
  const auto [lo, hi] = std::minmax_element(fits.begin(), fits.end());
  EXPECT_LE(*hi / *lo, 5.0);
}

TEST(ImproveOrLocalize, IncreasingStepFlaggedNotFatal) {
  std::vector<StepRecord> steps(3);
  steps[0].event = StepEvent::Anchor;
  steps[0].value = 1.0;
  steps[1].t = 1;
  steps[1].value = 2.0;
  steps[1].drift = 0.5;
  steps[2].t = 2;
  steps[2].value = 0.0;
  steps[2].drift = 0.6;
  const auto rep = check_improve_or_localize(steps, 1.0, 1.0);
  EXPECT_EQ(rep.increasing_steps, 1u);
  EXPECT_FALSE(rep.holds);
  EXPECT_EQ(rep.c1_fit, 0.0);
}

TEST(Stuck, CouplingOffsetArithmetic) {
  EXPECT_DOUBLE_EQ(coupling_offset(0.1, 0.01, 100), 1e-4);
}

TEST(Stuck, QuadraticSeparationTimeIsClosedForm) {
  const double gamma = 0.5, eta = 0.1;
  auto obj = make_quadratic_saddle(10, gamma, 1.0, 6, 4);
  const PullbackOracle o(obj, obj->manifold().point(Vector::Zero(10)));
  SolverParams p;
  p.tssrg = params(eta, 20, 6, 6, 1e9, 400);
  p.r = 0.01;
  p.delta = 0.3;
  p.rho_hat = 1.3;
  StuckOptions opt;
  opt.trials = 8;
  const auto st = stuck_region_experiment(o, p, opt, Rng(3));
  EXPECT_NEAR(st.lambda_min, -gamma, 1e-6);
  EXPECT_NEAR(std::abs(st.e1.dot(obj->eigenvector(0))), 1.0, 1e-8);
  const auto expect = predicted_separation_time(eta, gamma, st.r0, st.threshold);
  // oracle: smallest t with (1 + eta gamma)^t r0 >= threshold, by iteration
  std::uint64_t t = 0;
  for (double s = st.r0; s < st.threshold; s *= 1 + eta * gamma) ++t;
  EXPECT_EQ(expect, t);
  for (const auto& tr : st.per_trial) {
    ASSERT_TRUE(tr.separation_time);
    EXPECT_EQ(*tr.separation_time, expect);
    EXPECT_TRUE(tr.deviated);
  }
  EXPECT_DOUBLE_EQ(st.deviation_frequency, 1.0);
}

TEST(Stuck, RayleighSaddleEscapes) {
  auto obj = make_rayleigh(100, 1000, gap_spectrum(100, 1.0), 0.5, 1);
  const PullbackOracle o(obj, obj->manifold().point(obj->eigenvector(1)));
  const auto est = estimate_lipschitz(o, Rng(1));
  const SolverParams p = derive_params(Mode::FiniteSum, 1000, 1e-3, 0.1, est.L, est.rho, {}, 0.5, est.ell);
  StuckOptions opt;
  opt.trials = 50;
  const auto st = stuck_region_experiment(o, p, opt, Rng(2));
  EXPECT_GE(st.deviation_frequency, 0.9);
  EXPECT_GE(st.decrease_frequency, 0.9);
  int above_F = 0;
  for (const auto& tr : st.per_trial) above_F += tr.decrease > st.escape_F;
  EXPECT_GE(above_F, 45);
}

TEST(Stuck, ZeroTrialsIsEmpty) {
  auto obj = diag210();
  const PullbackOracle o(obj, obj->manifold().point(vec({0, 1, 0})));
  SolverParams p;
  p.tssrg = params(0.1, 4, 2, 4, 0.5, 10);
  p.r = 0.01;
  p.delta = 0.1;
  p.rho_hat = 1.0;
  StuckOptions opt;
  opt.trials = 0;
  const auto st = stuck_region_experiment(o, p, opt, Rng(1));
  EXPECT_EQ(st.trials, 0u);
  EXPECT_TRUE(st.per_trial.empty());
  EXPECT_TRUE(std::isnan(st.deviation_frequency));
}

TEST(Stuck, NonSaddleAnchorRejected) {
  auto obj = diag210();
  const PullbackOracle o(obj, obj->manifold().point(vec({1, 0, 0})));
  SolverParams p;
  p.tssrg = params(0.1, 4, 2, 4, 0.5, 10);
  p.r = 0.01;
  p.delta = 0.1;
  p.rho_hat = 1.0;
  EXPECT_THROW(stuck_region_experiment(o, p, {}, Rng(1)), PreconditionError);
}

TEST(Epoch, DescentHelperAndGrowthFit) {
  TssrgOutcome out;
  out.value_start = 1.0;
  out.value_end = 0.5;
  EXPECT_TRUE(epoch_descends(out));
  std::vector<double> g;
  for (int t = 0; t < 20; ++t) g.push_back(3.0 * std::pow(1.05, t));
  EXPECT_NEAR(fit_growth_rate(g), 1.05, 1e-12);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
