#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "prsrg/geometry.hpp"
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

// Jacobian of u -> R_x(u) along v, by central differences in test code.
Vector fd_differential(const Manifold& mf, const Vector& x, const Vector& u, const Vector& v,
                       double h = 1e-6) {
  return (mf.retract_raw(x, u + h * v) - mf.retract_raw(x, u - h * v)) / (2.0 * h);
}

std::vector<std::shared_ptr<const Manifold>> all_manifolds() {
  return {std::make_shared<Sphere>(6), std::make_shared<Stiefel>(5, 2),
          std::make_shared<Euclidean>(4, 2.0)};
}

}  // namespace

TEST(Retract, SphereExample) {
  Sphere s(3);
  const auto x = s.point(vec({1, 0, 0}));
  const auto y = s.retract(x, s.tangent(x, vec({0, 1, 0})));
  EXPECT_NEAR(y.coords[0], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(y.coords[1], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(y.coords[2], 0.0);
}

TEST(Retract, EuclideanIsAddition) {
  Euclidean e(2);
  const auto x = e.point(vec({2, 3}));
  const auto y = e.retract(x, e.tangent(x, vec({1, -1})));
  EXPECT_EQ(y.coords, vec({3, 2}));
}

TEST(Retract, ZeroIsIdentityOnEveryManifold) {
  Rng rng(11);
  for (const auto& mf : all_manifolds()) {
    for (int k = 0; k < 10; ++k) {
      const auto x = mf->point(random_point(*mf, rng));
      const auto y = mf->retract(x, mf->zero(x));
      EXPECT_LE((y.coords - x.coords).norm(), 1e-12) << mf->id();
      EXPECT_LE((mf->retract_raw(x.coords, Vector::Zero(mf->ambient_dim())) - x.coords).norm(), 1e-12);
    }
  }
}

TEST(Retract, StaysOnManifold) {
  Rng rng(12);
  for (const auto& mf : all_manifolds()) {
    for (int k = 0; k < 20; ++k) {
      const Vector x = random_point(*mf, rng);
      const Vector u = random_tangent(*mf, x, 0.4, rng);
      EXPECT_TRUE(mf->contains(mf->retract_raw(x, u))) << mf->id();
    }
  }
}

TEST(Retract, BaseMismatchIsContractViolation) {
  Sphere s(3);
  const auto x = s.point(vec({1, 0, 0}));
  const auto y = s.point(vec({0, 1, 0}));
  EXPECT_THROW(s.retract(x, s.tangent(y, vec({1, 0, 0}))), ContractViolation);
}

TEST(Retract, OffManifoldPointRejected) {
  Sphere s(3);
  EXPECT_THROW(s.point(vec({1, 1, 0})), ContractViolation);
  Stiefel st(3, 2);
  EXPECT_THROW(st.point(vec({1, 0, 0, 1, 0, 0})), ContractViolation);
}

TEST(Retract, NonTangentRejected) {
  Sphere s(3);
  const auto x = s.point(vec({1, 0, 0}));
  EXPECT_THROW(s.tangent(x, vec({0.1, 1, 0})), ContractViolation);
}

TEST(DRetract, AtZeroIsIdentity) {
  Rng rng(13);
  for (const auto& mf : all_manifolds()) {
    const auto x = mf->point(random_point(*mf, rng));
    const auto v = mf->tangent(x, random_tangent(*mf, x.coords, 1.3, rng));
    const auto tv = mf->dretract_apply(x, mf->zero(x), v);
    EXPECT_LE((tv.coords - v.coords).norm(), 1e-14) << mf->id();
  }
}

TEST(DRetract, SphereExample) {
  Sphere s(3, 1.0, 0.5);
  const auto x = s.point(vec({1, 0, 0}));
  const auto u = s.tangent(x, vec({0, 1, 0}));
  const auto v = s.tangent(x, vec({0, 0, 1}));
  const Vector got = s.dretract_apply(x, u, v).coords;
  const Vector oracle = fd_differential(s, x.coords, u.coords, v.coords);
  EXPECT_LE((got - oracle).norm(), 1e-8);
  EXPECT_NEAR(got[2], 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(got[0], 0.0, 1e-12);
  EXPECT_NEAR(got[1], 0.0, 1e-12);
}

TEST(DRetract, EuclideanIsIdentity) {
  Euclidean e(3, 10.0);
  Rng rng(14);
  const auto x = e.point(gaussian(3, rng));
  const auto u = e.tangent(x, gaussian(3, rng));
  const auto v = e.tangent(x, gaussian(3, rng));
  EXPECT_EQ(e.dretract_apply(x, u, v).coords, v.coords);
}

TEST(DRetract, MatchesFiniteDifferencesEverywhere) {
  Rng rng(15);
  for (const auto& mf : all_manifolds()) {
    for (int k = 0; k < 10; ++k) {
      const Vector x = random_point(*mf, rng);
      const Vector u = random_tangent(*mf, x, 0.45, rng);
      const Vector v = random_tangent(*mf, x, 1.0, rng);
      const Vector oracle = fd_differential(*mf, x, u, v);
      EXPECT_LE((mf->dretract_raw(x, u, v) - oracle).norm(), 1e-7) << mf->id();
    }
  }
}

TEST(DRetract, OutOfBallRejected) {
  Sphere s(3, 0.5);
  const auto x = s.point(vec({1, 0, 0}));
  const auto u = s.tangent(x, vec({0, 0.6, 0}));
  const auto v = s.tangent(x, vec({0, 0, 1}));
  EXPECT_THROW(s.dretract_apply(x, u, v), OutOfBall);
}

TEST(DRetract, FirstOrderSlope) {
  // |T_{s v}[v] - v| = O(s)
  Rng rng(16);
  for (const auto& mf : all_manifolds()) {
    const Vector x = random_point(*mf, rng);
    const Vector v = random_tangent(*mf, x, 1.0, rng);
    const double e1 = (mf->dretract_raw(x, 1e-2 * v, v) - v).norm();
    const double e2 = (mf->dretract_raw(x, 1e-3 * v, v) - v).norm();
    if (e1 < 1e-12) continue;
    EXPECT_LE(e2, 0.2 * e1) << mf->id();
  }
}

TEST(DRetract, SecondOrderRetraction) {
  // tangential component of c''(0) for c(t) = R_x(t u) vanishes
  Rng rng(17);
  const double h = 1e-3;
  for (const auto& mf : all_manifolds()) {
    for (int k = 0; k < 10; ++k) {
      const Vector x = random_point(*mf, rng);
      const Vector u = random_tangent(*mf, x, 1.0, rng);
      auto c = [&](double t) { return mf->retract_raw(x, t * u); };
      const Vector acc =
          (-c(2 * h) + 16 * c(h) - 30 * c(0) + 16 * c(-h) - c(-2 * h)) / (12 * h * h);
      EXPECT_LE(mf->project_tangent(x, acc).norm(), 1e-6) << mf->id();
    }
  }
}

TEST(Adjoint, AtZeroIsRebase) {
  Sphere s(4);
  Rng rng(18);
  const auto x = s.point(random_on_sphere(4, rng));
  const auto w = s.tangent(x, random_tangent(s, x.coords, 1.0, rng));
  const auto r = s.dretract_adjoint_apply(x, s.zero(x), w);
  EXPECT_EQ(r.coords, w.coords);
  EXPECT_TRUE(same_point(r.base, x));
}

TEST(Adjoint, SphereExample) {
  Sphere s(3, 1.0, 0.5);
  const auto x = s.point(vec({1, 0, 0}));
  const auto u = s.tangent(x, vec({0, 1, 0}));
  const auto y = s.retract(x, u);
  const auto w = s.tangent(y, vec({0, 0, 1}));
  const Vector got = s.dretract_adjoint_apply(x, u, w).coords;
  // transpose of the FD Jacobian in orthonormal tangent bases
  const Matrix bx = (Matrix(3, 2) << 0, 0, 1, 0, 0, 1).finished();
  const Vector yc = y.coords;
  Matrix by(3, 2);
  by.col(0) = vec({-yc[1], yc[0], 0}).normalized();
  by.col(1) = vec({0, 0, 1});
  Matrix jac(2, 2);
  for (int k = 0; k < 2; ++k)
    jac.col(k) = by.transpose() * fd_differential(s, x.coords, u.coords, bx.col(k));
  const Vector oracle = bx * (jac.transpose() * (by.transpose() * w.coords));
  EXPECT_LE((got - oracle).norm(), 1e-8);
  EXPECT_NEAR(got[2], 1 / std::sqrt(2.0), 1e-10);
}

TEST(Adjoint, PairingIdentity) {
  Rng rng(19);
  for (const auto& mf : all_manifolds()) {
    for (int k = 0; k < 20; ++k) {
      const Vector x = random_point(*mf, rng);
      const Vector u = random_tangent(*mf, x, 0.4, rng);
      const Vector y = mf->retract_raw(x, u);
      const Vector v = random_tangent(*mf, x, 1.0, rng);
      const Vector w = random_tangent(*mf, y, 1.0, rng);
      const double lhs = mf->dretract_raw(x, u, v).dot(w);
      const double rhs = v.dot(mf->dretract_adjoint_raw(x, u, w));
      EXPECT_LE(std::abs(lhs - rhs), 1e-8 * v.norm() * w.norm()) << mf->id();
    }
  }
}

TEST(Adjoint, WrongBaseRejected) {
  Sphere s(3);
  const auto x = s.point(vec({1, 0, 0}));
  const auto u = s.tangent(x, vec({0, 0.3, 0}));
  EXPECT_THROW(s.dretract_adjoint_apply(x, u, s.tangent(x, vec({0, 0, 1}))), ContractViolation);
}

TEST(TangentProject, SphereExample) {
  Sphere s(3);
  const auto x = s.point(vec({1, 0, 0}));
  EXPECT_EQ(s.tangent_project(x, vec({5, 1, 2})).coords, vec({0, 1, 2}));
}

TEST(TangentProject, Idempotent) {
  Rng rng(20);
  for (const auto& mf : all_manifolds()) {
    const auto x = mf->point(random_point(*mf, rng));
    const Vector a = random_tangent(*mf, x.coords, 2.0, rng);
    EXPECT_LE((mf->tangent_project(x, a).coords - a).norm(), 1e-12) << mf->id();
    const Vector p = mf->tangent_project(x, gaussian(mf->ambient_dim(), rng)).coords;
    EXPECT_TRUE(mf->is_tangent(x.coords, p)) << mf->id();
  }
}

TEST(TangentProject, EuclideanIsIdentity) {
  Euclidean e(3);
  const auto x = e.point(vec({1, 2, 3}));
  EXPECT_EQ(e.tangent_project(x, vec({4, 5, 6})).coords, vec({4, 5, 6}));
}

TEST(TangentBasis, OrthonormalAndTangent) {
  Rng rng(21);
  for (const auto& mf : all_manifolds()) {
    const Vector x = random_point(*mf, rng);
    const Matrix b = mf->tangent_basis(x);
    EXPECT_EQ(b.cols(), mf->dim());
    EXPECT_LE((b.transpose() * b - Matrix::Identity(b.cols(), b.cols())).norm(), 1e-12);
    for (Eigen::Index k = 0; k < b.cols(); ++k) EXPECT_TRUE(mf->is_tangent(x, b.col(k)));
    EXPECT_EQ(mf->tangent_basis(x), b);  // deterministic
  }
}

TEST(TangentBasis, StiefelDimension) {
  Stiefel st(10, 3);
  EXPECT_EQ(st.dim(), 10 * 3 - 3 * 4 / 2);
}

TEST(SampleBall, ZeroRadiusGivesZero) {
  Sphere s(5);
  Rng rng(22);
  const auto x = s.point(random_on_sphere(5, rng));
  EXPECT_TRUE(s.sample_ball(x, 0.0, rng).coords.isZero(0.0));
}

TEST(SampleBall, InsideBallAndTangent) {
  Rng rng(23);
  for (const auto& mf : all_manifolds()) {
    const auto x = mf->point(random_point(*mf, rng));
    for (int k = 0; k < 10000 / 3; ++k) {
      const Vector u = mf->sample_ball(x, 0.3, rng).coords;
      ASSERT_LE(u.norm(), 0.3 * (1 + 1e-12));
      ASSERT_TRUE(mf->is_tangent(x.coords, u, 1e-10));
    }
  }
}

TEST(SampleBall, SecondMomentMatchesUniformBall) {
  Euclidean e(10);
  Rng rng(24);
  const auto x = e.zero(e.point(Vector::Zero(10))).base;
  const int N = 20000;
  double m2 = 0.0;
  for (int k = 0; k < N; ++k) m2 += e.sample_ball(x, 1.0, rng).coords.squaredNorm();
  EXPECT_NEAR(m2 / N, 10.0 / 12.0, 0.05 * 10.0 / 12.0);
}

TEST(SampleBall, NegativeRadiusRejected) {
  Sphere s(3);
  Rng rng(25);
  EXPECT_THROW(s.sample_ball(s.point(vec({1, 0, 0})), -1.0, rng), ParameterError);
}

TEST(DifferentialBound, SmallestSingularValueInsideBall) {
  Sphere s(20, 0.5, 1.0);
  Rng rng(26);
  int failures = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto x = s.point(random_on_sphere(20, rng));
    const auto u = s.sample_ball(x, s.ball_radius(), rng);
    const Matrix j = s.differential_matrix(x, u);
    Eigen::JacobiSVD<Matrix> svd(j);
    failures += svd.singularValues().minCoeff() < 0.5;
  }
  EXPECT_EQ(failures, 0);
}

TEST(ManifoldFactory, ParsesIds) {
  EXPECT_EQ(make_manifold("sphere:7")->ambient_dim(), 7);
  EXPECT_EQ(make_manifold("sphere:7")->dim(), 6);
  const auto st = make_manifold("stiefel:6x2");
  EXPECT_EQ(st->ambient_dim(), 12);
  EXPECT_EQ(st->dim(), 9);
  EXPECT_EQ(make_manifold("euclidean:4")->dim(), 4);
  EXPECT_DOUBLE_EQ(make_manifold("sphere:3")->ball_radius(), 0.5);
  EXPECT_DOUBLE_EQ(make_manifold("euclidean:3")->ball_radius(), 1e9);
  EXPECT_DOUBLE_EQ(make_manifold("sphere:3", {0.25, 2.0})->ball_radius(), 0.25);
}

TEST(ManifoldFactory, RejectsBadIds) {
  EXPECT_THROW(make_manifold("torus:3"), ConfigError);
  EXPECT_THROW(make_manifold("sphere"), ConfigError);
  EXPECT_THROW(make_manifold("sphere:x"), ConfigError);
  EXPECT_THROW(make_manifold("stiefel:3x4"), Error);
}

TEST(ManifoldFactory, BallRadiusRespectsC0) {
  EXPECT_THROW(Sphere(3, 0.6, 1.0), ParameterError);
  EXPECT_NO_THROW(Sphere(3, 0.5, 1.0));
}
