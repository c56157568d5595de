#pragma once

// Second-order stationarity certificate: gradient norm at the anchor plus the
// smallest Hessian eigenvalue from Lanczos on the finite-difference Hessian of
// the pullback at the origin.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "prsrg/geometry.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/random.hpp"

namespace prsrg {

struct LanczosResult {
  double lambda_min = 0.0;
  /// Unit eigenvector in the coordinates of the operator's space.
  Vector eigenvector;
  std::size_t iterations = 0;
  std::size_t restarts = 0;
  bool failed = false;
  double norm_estimate = 0.0;
  double tolerance = 0.0;
  double residual = 0.0;
};

/// Smallest eigenpair of a symmetric operator on R^d by Lanczos with full
/// reorthogonalization. An invariant Krylov subspace found before
/// max_iterations (and before d vectors) is extended by a fresh random vector
/// orthogonal to the current basis, at most max_restarts times; a further
/// breakdown sets the failure flag.
inline LanczosResult lanczos_min(const std::function<Vector(const Vector&)>& op,
                                 Eigen::Index d, std::size_t max_iterations, Rng rng,
                                 double rel_tol = 1e-6, std::size_t max_restarts = 3) {
  LanczosResult res;
  if (d == 0) return res;
  const auto k_max = static_cast<Eigen::Index>(
      std::min<std::size_t>(std::max<std::size_t>(max_iterations, 1), static_cast<std::size_t>(d)));
  Matrix q(d, k_max);
  Vector alpha = Vector::Zero(k_max);
  Vector beta = Vector::Zero(k_max);

  auto fresh = [&](Eigen::Index cols) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Vector z(d);
      for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index j = 0; j < cols; ++j) z -= q.col(j).dot(z) * q.col(j);
      const double zn = z.norm();
      if (zn > 1e-8) return Vector(z / zn);
    }
    return Vector();
  };

  q.col(0) = fresh(0);
  Eigen::Index k = 0;
  double hnorm = 0.0;
  for (; k < k_max; ++k) {
    Vector w = op(q.col(k));
    alpha[k] = q.col(k).dot(w);
    hnorm = std::max(hnorm, w.norm());
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index j = 0; j <= k; ++j) w -= q.col(j).dot(w) * q.col(j);
    const double b = w.norm();
    if (k + 1 == k_max) {
      beta[k] = b;
      break;
    }
    if (b <= rel_tol * std::max(hnorm, 1e-300)) {
      if (res.restarts >= max_restarts) {
        res.failed = true;
        break;
      }
      ++res.restarts;
      Vector z = fresh(k + 1);
      if (z.size() == 0) {
        res.failed = true;
        break;
      }
      beta[k] = 0.0;
      q.col(k + 1) = z;
    } else {
      beta[k] = b;
      q.col(k + 1) = w / b;
    }
  }
  const Eigen::Index used = std::min<Eigen::Index>(k + 1, k_max);
  Matrix t = Matrix::Zero(used, used);
  for (Eigen::Index j = 0; j < used; ++j) {
    t(j, j) = alpha[j];
    if (j + 1 < used) t(j, j + 1) = t(j + 1, j) = beta[j];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(t);
  const Vector s = es.eigenvectors().col(0);
  res.lambda_min = es.eigenvalues()[0];
  res.norm_estimate = std::max(hnorm, es.eigenvalues().cwiseAbs().maxCoeff());
  res.tolerance = rel_tol * res.norm_estimate;
  res.residual = std::abs(beta[used - 1] * s[used - 1]);
  res.iterations = static_cast<std::size_t>(used);
  Vector vec = q.leftCols(used) * s;
  vec.normalize();
  res.eigenvector = vec;
  return res;
}

/// Flips v so that its first coordinate of non-negligible magnitude is positive.
inline Vector fix_sign(Vector v) {
  const double scale = v.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > 1e-8 * scale) {
      if (v[i] < 0) v = -v;
      break;
    }
  }
  return v;
}

struct Certification {
  double grad_norm = 0.0;
  double lambda_min_estimate = 0.0;
  std::size_t lanczos_iters = 0;
  bool passed = false;
  double lanczos_tolerance = 0.0;
  bool lanczos_failed = false;
  /// The Hessian clause was skipped because delta >= ell.
  bool hessian_skipped = false;
  double epsilon = 0.0;
  double delta = 0.0;
  /// Sign-fixed unit eigenvector for lambda_min, tangent at the anchor.
  Vector min_eigenvector;
};

struct CertifyOptions {
  std::size_t max_iterations = 50;
  double rel_tol = 1e-6;
  std::size_t max_restarts = 3;
  std::uint64_t seed = 0x1a2c;
  /// Hessian bound; delta >= ell makes the Hessian clause pass trivially.
  std::optional<double> ell;
};

inline Certification certify(const PullbackOracle& oracle, double epsilon, double delta,
                             const CertifyOptions& opt = {}) {
  const Manifold& mf = oracle.manifold();
  const Vector zero = Vector::Zero(mf.ambient_dim());
  Certification c;
  c.epsilon = epsilon;
  c.delta = delta;
  c.grad_norm = oracle.grad_exact(zero).norm();
  if (opt.ell && delta >= *opt.ell) {
    c.hessian_skipped = true;
    c.lambda_min_estimate = std::numeric_limits<double>::quiet_NaN();
    c.passed = c.grad_norm <= epsilon;
    return c;
  }
  const Matrix basis = mf.tangent_basis(oracle.anchor().coords);
  auto op = [&](const Vector& z) -> Vector {
    return basis.transpose() * oracle.hvp(zero, basis * z);
  };
  const LanczosResult lz = lanczos_min(op, basis.cols(), opt.max_iterations,
                                       Rng(opt.seed).split(Stream::Lanczos, 0), opt.rel_tol,
                                       opt.max_restarts);
  c.lambda_min_estimate = lz.lambda_min;
  c.lanczos_iters = lz.iterations;
  c.lanczos_tolerance = lz.tolerance;
  c.lanczos_failed = lz.failed;
  c.min_eigenvector = fix_sign(basis * lz.eigenvector);
  c.passed = c.grad_norm <= epsilon && c.lambda_min_estimate >= -delta - lz.tolerance;
  return c;
}

inline Certification certify(const std::shared_ptr<const FiniteSumObjective>& objective,
                             const ManifoldPoint& x, double epsilon, double delta,
                             const CertifyOptions& opt = {}) {
  return certify(PullbackOracle(objective, x), epsilon, delta, opt);
}

}  // namespace prsrg
