#pragma once

// Manifolds embedded in R^N with the induced metric: the unit sphere, the
// Stiefel manifold with the polar retraction, and Euclidean space. All points
// and tangent vectors are carried in ambient coordinates (Stiefel matrices are
// vectorized column-major).

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "prsrg/errors.hpp"
#include "prsrg/random.hpp"

namespace prsrg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kManifoldTolerance = 1e-10;

struct ManifoldPoint {
  Vector coords;
  std::string manifold_id;
};

struct TangentVector {
  ManifoldPoint base;
  Vector coords;

  double norm() const { return coords.norm(); }
};

inline bool same_point(const ManifoldPoint& a, const ManifoldPoint& b) {
  return a.manifold_id == b.manifold_id && a.coords.size() == b.coords.size() &&
         a.coords == b.coords;
}

class Manifold {
 public:
  virtual ~Manifold() = default;

  const std::string& id() const { return id_; }
  Eigen::Index ambient_dim() const { return ambient_dim_; }
  /// Intrinsic dimension d.
  Eigen::Index dim() const { return dim_; }
  /// Radius D of the constraint ball in every tangent space.
  double ball_radius() const { return ball_radius_; }
  double c0() const { return c0_; }

  // ---- raw ambient-coordinate kernels -----------------------------------

  virtual bool contains(const Vector& x, double tol = kManifoldTolerance) const = 0;

  /// Orthogonal projection of an ambient vector onto T_x M.
  virtual Vector project_tangent(const Vector& x, const Vector& a) const = 0;

  virtual Vector retract_raw(const Vector& x, const Vector& u) const = 0;

  /// Columns span the normal space at x; used to complete a tangent basis.
  virtual Matrix normal_basis(const Vector& x) const = 0;

  virtual bool is_tangent(const Vector& x, const Vector& u,
                          double tol = kManifoldTolerance) const {
    return (u - project_tangent(x, u)).norm() <= tol * std::max(1.0, u.norm());
  }

  /// Orthonormal basis of T_x M (ambient_dim x dim), obtained by completing a
  /// Householder QR of the normal basis. Deterministic in x.
  virtual Matrix tangent_basis(const Vector& x) const {
    const Matrix normal = normal_basis(x);
    const Eigen::Index n = ambient_dim_;
    if (normal.cols() == 0) return Matrix::Identity(n, n);
    Eigen::HouseholderQR<Matrix> qr(normal);
    const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
    return q.rightCols(n - normal.cols());
  }

  /// T_u[v] = D R_x(u)[v]. Default: central differences of the retraction
  /// along v with step 1e-6 * max(1, |u|).
  virtual Vector dretract_raw(const Vector& x, const Vector& u,
                              const Vector& v) const {
    const double vn = v.norm();
    if (vn == 0.0) return Vector::Zero(v.size());
    if (u.norm() == 0.0) return project_tangent(x, v);
    const double h = 1e-6 * std::max(1.0, u.norm());
    const Vector dir = v / vn;
    const Vector fd =
        (retract_raw(x, u + h * dir) - retract_raw(x, u - h * dir)) / (2.0 * h);
    return project_tangent(retract_raw(x, u), fd) * vn;
  }

  /// T_u^*[w], the adjoint of dretract_raw with respect to the induced
  /// metrics at x and R_x(u). Default: assemble the Jacobian of T_u in
  /// orthonormal tangent bases and apply its transpose.
  virtual Vector dretract_adjoint_raw(const Vector& x, const Vector& u,
                                      const Vector& w) const {
    if (u.norm() == 0.0) return project_tangent(x, w);
    const Matrix bx = tangent_basis(x);
    const Matrix by = tangent_basis(retract_raw(x, u));
    const Matrix jac = differential_matrix(x, u, bx, by);
    return bx * (jac.transpose() * (by.transpose() * w));
  }

  /// Matrix of T_u in the bases (bx at x, by at R_x(u)).
  Matrix differential_matrix(const Vector& x, const Vector& u, const Matrix& bx,
                             const Matrix& by) const {
    Matrix jac(by.cols(), bx.cols());
    for (Eigen::Index k = 0; k < bx.cols(); ++k)
      jac.col(k) = by.transpose() * dretract_raw(x, u, bx.col(k));
    return jac;
  }

  Matrix differential_matrix(const ManifoldPoint& x, const TangentVector& u) const {
    check_base(x, u);
    return differential_matrix(x.coords, u.coords, tangent_basis(x.coords),
                               tangent_basis(retract_raw(x.coords, u.coords)));
  }

  // ---- typed, contract-checked operations --------------------------------

  ManifoldPoint point(Vector coords) const {
    if (coords.size() != ambient_dim_)
      throw ContractViolation(id_ + ": point has " + std::to_string(coords.size()) +
                              " coordinates, expected " + std::to_string(ambient_dim_));
    if (!contains(coords))
      throw ContractViolation(id_ + ": point violates the manifold constraint");
    return ManifoldPoint{std::move(coords), id_};
  }

  TangentVector tangent(const ManifoldPoint& x, Vector coords) const {
    check_point(x);
    if (coords.size() != ambient_dim_)
      throw ContractViolation(id_ + ": tangent vector has wrong dimension");
    if (!is_tangent(x.coords, coords))
      throw ContractViolation(id_ + ": vector is not tangent at the base point");
    return TangentVector{x, std::move(coords)};
  }

  TangentVector zero(const ManifoldPoint& x) const {
    check_point(x);
    return TangentVector{x, Vector::Zero(ambient_dim_)};
  }

  ManifoldPoint retract(const ManifoldPoint& x, const TangentVector& u) const {
    check_base(x, u);
    if (u.coords.isZero(0.0)) return x;
    return ManifoldPoint{retract_raw(x.coords, u.coords), id_};
  }

  TangentVector dretract_apply(const ManifoldPoint& x, const TangentVector& u,
                               const TangentVector& v) const {
    check_base(x, u);
    check_base(x, v);
    check_ball(u);
    if (u.coords.isZero(0.0)) return TangentVector{x, v.coords};
    return TangentVector{ManifoldPoint{retract_raw(x.coords, u.coords), id_},
                         dretract_raw(x.coords, u.coords, v.coords)};
  }

  /// w must be tangent at R_x(u).
  TangentVector dretract_adjoint_apply(const ManifoldPoint& x,
                                       const TangentVector& u,
                                       const TangentVector& w) const {
    check_base(x, u);
    check_ball(u);
    const ManifoldPoint y = retract(x, u);
    if (!same_point(y, w.base))
      throw ContractViolation(id_ + ": adjoint argument is not based at R_x(u)");
    if (u.coords.isZero(0.0)) return TangentVector{x, w.coords};
    return TangentVector{x, dretract_adjoint_raw(x.coords, u.coords, w.coords)};
  }

  TangentVector tangent_project(const ManifoldPoint& x, const Vector& a) const {
    check_point(x);
    if (a.size() != ambient_dim_)
      throw ContractViolation(id_ + ": ambient vector has wrong dimension");
    return TangentVector{x, project_tangent(x.coords, a)};
  }

  /// Uniform draw from {u in T_x M : |u| <= r}: isotropic Gaussian direction
  /// in an orthonormal tangent basis, radius r * U^(1/d).
  TangentVector sample_ball(const ManifoldPoint& x, double r, Rng& rng) const {
    check_point(x);
    if (!(r >= 0.0)) throw ParameterError("sample_ball: radius must be >= 0");
    if (r == 0.0 || dim_ == 0) return zero(x);
    Vector g(dim_);
    double gn = 0.0;
    do {
      for (Eigen::Index i = 0; i < dim_; ++i) g[i] = rng.normal();
      gn = g.norm();
    } while (gn == 0.0);
    const double radius = r * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim_));
    const Vector local = g * (radius / gn);
    if (normal_dim() == 0) return TangentVector{x, local};
    return TangentVector{x, tangent_basis(x.coords) * local};
  }

  void check_point(const ManifoldPoint& x) const {
    if (x.manifold_id != id_)
      throw ContractViolation("point belongs to '" + x.manifold_id +
                              "', not '" + id_ + "'");
    if (x.coords.size() != ambient_dim_)
      throw ContractViolation(id_ + ": point has wrong dimension");
  }

  void check_base(const ManifoldPoint& x, const TangentVector& u) const {
    check_point(x);
    if (!same_point(x, u.base))
      throw ContractViolation(id_ + ": tangent vector is based at a different point");
    if (u.coords.size() != ambient_dim_)
      throw ContractViolation(id_ + ": tangent vector has wrong dimension");
  }

  void check_ball(const TangentVector& u) const {
    const double n = u.norm();
    if (n > ball_radius_ * (1.0 + 1e-10)) throw OutOfBall(n, ball_radius_);
  }

  Eigen::Index normal_dim() const { return ambient_dim_ - dim_; }

 protected:
  Manifold(std::string id, Eigen::Index ambient, Eigen::Index dim, double D,
           double c0)
      : id_(std::move(id)),
        ambient_dim_(ambient),
        dim_(dim),
        ball_radius_(D),
        c0_(c0) {
    if (!(D > 0.0)) throw ParameterError(id_ + ": ball radius D must be positive");
    if (!(c0 >= 0.0)) throw ParameterError(id_ + ": c0 must be nonnegative");
    if (c0 > 0.0 && D > 1.0 / (2.0 * c0) * (1.0 + 1e-12))
      throw ParameterError(id_ + ": ball radius D must satisfy D <= 1/(2 c0)");
  }

 private:
  std::string id_;
  Eigen::Index ambient_dim_;
  Eigen::Index dim_;
  double ball_radius_;
  double c0_;
};

/// Unit sphere in R^n with the metric-projection retraction (x+u)/|x+u|.
class Sphere final : public Manifold {
 public:
  explicit Sphere(Eigen::Index n, double D = 0.5, double c0 = 1.0)
      : Manifold("sphere:" + std::to_string(n), n, n - 1, D, c0) {
    if (n < 2) throw ParameterError("sphere: ambient dimension must be >= 2");
  }

  bool contains(const Vector& x, double tol) const override {
    return x.size() == ambient_dim() && std::abs(x.norm() - 1.0) <= tol;
  }

  bool is_tangent(const Vector& x, const Vector& u, double tol) const override {
    return std::abs(x.dot(u)) <= tol * std::max(1.0, u.norm());
  }

  Vector project_tangent(const Vector& x, const Vector& a) const override {
    return a - x.dot(a) * x;
  }

  Vector retract_raw(const Vector& x, const Vector& u) const override {
    return (x + u).normalized();
  }

  Matrix normal_basis(const Vector& x) const override { return x; }

  Vector dretract_raw(const Vector& x, const Vector& u,
                      const Vector& v) const override {
    const Vector z = x + u;
    const double zn = z.norm();
    const Vector y = z / zn;
    return (v - y * y.dot(v)) / zn;
  }

  Vector dretract_adjoint_raw(const Vector& x, const Vector& u,
                              const Vector& w) const override {
    const Vector z = x + u;
    const double zn = z.norm();
    const Vector y = z / zn;
    const Vector t = w - y * y.dot(w);
    return (t - x * x.dot(t)) / zn;
  }
};

/// Stiefel manifold St(n, p) = {X in R^{n x p} : X^T X = I} with the polar
/// retraction (X + U)((X + U)^T (X + U))^{-1/2}.
class Stiefel final : public Manifold {
 public:
  Stiefel(Eigen::Index n, Eigen::Index p, double D = 0.5, double c0 = 1.0)
      : Manifold("stiefel:" + std::to_string(n) + "x" + std::to_string(p), n * p,
                 n * p - p * (p + 1) / 2, D, c0),
        n_(n),
        p_(p) {
    if (p < 1 || n < p) throw ParameterError("stiefel: need 1 <= p <= n");
  }

  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return p_; }

  bool contains(const Vector& x, double tol) const override {
    if (x.size() != ambient_dim()) return false;
    const auto X = as_matrix(x);
    return ((X.transpose() * X) - Matrix::Identity(p_, p_)).cwiseAbs().maxCoeff() <= tol;
  }

  bool is_tangent(const Vector& x, const Vector& u, double tol) const override {
    const auto X = as_matrix(x);
    const auto U = as_matrix(u);
    const Matrix s = X.transpose() * U;
    return (s + s.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, u.norm());
  }

  Vector project_tangent(const Vector& x, const Vector& a) const override {
    const auto X = as_matrix(x);
    const auto A = as_matrix(a);
    const Matrix s = X.transpose() * A;
    const Matrix out = A - X * (0.5 * (s + s.transpose()));
    return Eigen::Map<const Vector>(out.data(), out.size());
  }

  Vector retract_raw(const Vector& x, const Vector& u) const override {
    const Matrix z = as_matrix(x) + as_matrix(u);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(z.transpose() * z);
    const Matrix inv_sqrt = eig.eigenvectors() *
                            eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                            eig.eigenvectors().transpose();
    const Matrix y = z * inv_sqrt;
    return Eigen::Map<const Vector>(y.data(), y.size());
  }

  Matrix normal_basis(const Vector& x) const override {
    const auto X = as_matrix(x);
    Matrix basis(ambient_dim(), p_ * (p_ + 1) / 2);
    Eigen::Index col = 0;
    for (Eigen::Index i = 0; i < p_; ++i) {
      for (Eigen::Index j = i; j < p_; ++j) {
        Matrix s = Matrix::Zero(p_, p_);
        s(i, j) = 1.0;
        s(j, i) = 1.0;
        const Matrix xs = X * s;
        basis.col(col++) = Eigen::Map<const Vector>(xs.data(), xs.size());
      }
    }
    return basis;
  }

  Eigen::Map<const Matrix> as_matrix(const Vector& v) const {
    return Eigen::Map<const Matrix>(v.data(), n_, p_);
  }

 private:
  Eigen::Index n_;
  Eigen::Index p_;
};

/// R^d with R_x(u) = x + u.
class Euclidean final : public Manifold {
 public:
  explicit Euclidean(Eigen::Index d, double D = 1e9)
      : Manifold("euclidean:" + std::to_string(d), d, d, D, 0.0) {
    if (d < 1) throw ParameterError("euclidean: dimension must be >= 1");
  }

  bool contains(const Vector& x, double) const override {
    return x.size() == ambient_dim() && x.allFinite();
  }
  bool is_tangent(const Vector&, const Vector& u, double) const override {
    return u.size() == ambient_dim();
  }
  Vector project_tangent(const Vector&, const Vector& a) const override { return a; }
  Vector retract_raw(const Vector& x, const Vector& u) const override { return x + u; }
  Matrix normal_basis(const Vector&) const override {
    return Matrix(ambient_dim(), 0);
  }
  Matrix tangent_basis(const Vector&) const override {
    return Matrix::Identity(ambient_dim(), ambient_dim());
  }
  Vector dretract_raw(const Vector&, const Vector&, const Vector& v) const override {
    return v;
  }
  Vector dretract_adjoint_raw(const Vector&, const Vector&,
                              const Vector& w) const override {
    return w;
  }
};

struct ManifoldOptions {
  /// Overrides the manifold's default ball radius when positive.
  double ball_radius = 0.0;
  /// Overrides the default c0 when nonnegative.
  double c0 = -1.0;
};

/// Builds a manifold from "sphere:<n>", "stiefel:<n>x<p>" or "euclidean:<d>".
/// Sphere defaults: D = 0.5, c0 = 1; Stiefel: D = 0.5, c0 = 1; Euclidean:
/// D = 1e9, c0 = 0.
inline std::shared_ptr<const Manifold> make_manifold(std::string_view id,
                                                     ManifoldOptions opts = {}) {
  const auto colon = id.find(':');
  if (colon == std::string_view::npos)
    throw ConfigError(0, "manifold id '" + std::string(id) + "' lacks ':'");
  const std::string kind(id.substr(0, colon));
  const std::string arg(id.substr(colon + 1));
  auto parse_int = [&](const std::string& s) -> Eigen::Index {
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || s.empty() || v <= 0)
      throw ConfigError(0, "bad dimension '" + s + "' in manifold id '" +
                               std::string(id) + "'");
    return static_cast<Eigen::Index>(v);
  };
  const bool curved = kind != "euclidean";
  const double D = opts.ball_radius > 0.0 ? opts.ball_radius : (curved ? 0.5 : 1e9);
  const double c0 = opts.c0 >= 0.0 ? opts.c0 : (curved ? 1.0 : 0.0);
  if (kind == "sphere") return std::make_shared<Sphere>(parse_int(arg), D, c0);
  if (kind == "euclidean") {
    if (c0 > 0.0) throw ParameterError("euclidean manifold has c0 = 0");
    return std::make_shared<Euclidean>(parse_int(arg), D);
  }
  if (kind == "stiefel") {
    const auto x = arg.find('x');
    if (x == std::string::npos)
      throw ConfigError(0, "stiefel id must read stiefel:<n>x<p>");
    return std::make_shared<Stiefel>(parse_int(arg.substr(0, x)),
                                     parse_int(arg.substr(x + 1)), D, c0);
  }
  throw ConfigError(0, "unknown manifold kind '" + kind + "'");
}

}  // namespace prsrg
