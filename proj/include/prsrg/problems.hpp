#pragma once

// Test objectives with known critical-point structure.
//
//  * RayleighObjective: f_i(x) = -x^T A_i x on the sphere with mean matrix
//    Abar = Q diag(spectrum) Q^T. Critical points are the eigenvectors of
//    Abar; every non-leading eigenvector is a strict saddle.
//  * StreamingRayleighObjective: A_w = a a^T, a ~ N(0, Abar).
//  * QuadraticObjective: f_i(u) = 1/2 u^T H_i u on R^d; with one negative
//    eigenvalue the origin is a strict saddle.
//  * DataPcaObjective: f_i(X) = -|X^T a_i|^2 for data rows a_i, on the
//    sphere or a Stiefel manifold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "prsrg/errors.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/objective.hpp"
#include "prsrg/random.hpp"

namespace prsrg {

/// Haar-distributed orthogonal matrix from a seed; seed 0 gives the identity.
inline Matrix random_orthogonal(Eigen::Index d, std::uint64_t seed) {
  if (seed == 0) return Matrix::Identity(d, d);
  Rng rng = Rng(seed).split(Stream::Sample, 0);
  Matrix g(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

/// Spectrum with lambda_1 = 1 + gap, and lambda_2 = 1 down to lambda_d = 0
/// evenly spaced. gap_spectrum(3, 1) = (2, 1, 0).
inline Vector gap_spectrum(Eigen::Index d, double gap) {
  if (d < 2) throw ParameterError("gap_spectrum: need d >= 2");
  Vector s(d);
  s[0] = 1.0 + gap;
  for (Eigen::Index j = 1; j < d; ++j)
    s[j] = d == 2 ? 1.0 : 1.0 - static_cast<double>(j - 1) / static_cast<double>(d - 2);
  return s;
}

namespace detail {

/// Zero-mean symmetric rank-2 perturbations. Component 2k carries +E_k,
/// component 2k+1 carries -E_k and a trailing odd component carries none,
/// with E_k = (s/2)(p_k q_k^T + q_k p_k^T) for unit p_k, q_k, so |E_k| <= s.
/// Batch means aggregate the +/- counts per pair first, so the all-component
/// mean is exactly zero.
class AntitheticNoise {
 public:
  AntitheticNoise() = default;

  AntitheticNoise(Eigen::Index dim, std::uint64_t n, double scale, Rng rng)
      : half_scale_(0.5 * scale) {
    if (scale < 0.0) throw ParameterError("noise_scale must be >= 0");
    if (scale == 0.0 || n < 2) return;
    const auto pairs = static_cast<Eigen::Index>(n / 2);
    p_.resize(dim, pairs);
    q_.resize(dim, pairs);
    for (Eigen::Index k = 0; k < pairs; ++k) {
      for (Eigen::Index i = 0; i < dim; ++i) p_(i, k) = rng.normal();
      for (Eigen::Index i = 0; i < dim; ++i) q_(i, k) = rng.normal();
      p_.col(k).normalize();
      q_.col(k).normalize();
    }
  }

  std::uint64_t pairs() const { return static_cast<std::uint64_t>(p_.cols()); }

  double sign(ComponentIndex i) const { return (i % 2 == 0) ? 1.0 : -1.0; }

  bool active(ComponentIndex i) const { return i / 2 < pairs(); }

  /// E_i x
  Vector apply(ComponentIndex i, const Vector& x) const {
    if (!active(i)) return Vector::Zero(x.size());
    const auto k = static_cast<Eigen::Index>(i / 2);
    return (sign(i) * half_scale_) *
           (p_.col(k) * q_.col(k).dot(x) + q_.col(k) * p_.col(k).dot(x));
  }

  /// x^T E_i x
  double quad(ComponentIndex i, const Vector& x) const {
    if (!active(i)) return 0.0;
    const auto k = static_cast<Eigen::Index>(i / 2);
    return sign(i) * 2.0 * half_scale_ * p_.col(k).dot(x) * q_.col(k).dot(x);
  }

  /// (1/|I|) sum_{i in I} E_i x
  Vector mean_apply(std::span<const ComponentIndex> idx, const Vector& x) const {
    Vector acc = Vector::Zero(x.size());
    if (pairs() == 0 || idx.empty()) return acc;
    std::vector<std::pair<std::uint64_t, int>> terms;
    terms.reserve(idx.size());
    for (const auto i : idx)
      if (active(i)) terms.emplace_back(i / 2, i % 2 == 0 ? 1 : -1);
    std::sort(terms.begin(), terms.end());
    for (std::size_t a = 0; a < terms.size();) {
      std::size_t b = a;
      long weight = 0;
      while (b < terms.size() && terms[b].first == terms[a].first) weight += terms[b++].second;
      if (weight != 0) {
        const auto k = static_cast<Eigen::Index>(terms[a].first);
        acc += static_cast<double>(weight) *
               (p_.col(k) * q_.col(k).dot(x) + q_.col(k) * p_.col(k).dot(x));
      }
      a = b;
    }
    return acc * (half_scale_ / static_cast<double>(idx.size()));
  }

  Matrix dense(ComponentIndex i, Eigen::Index dim) const {
    if (!active(i)) return Matrix::Zero(dim, dim);
    const auto k = static_cast<Eigen::Index>(i / 2);
    return (sign(i) * half_scale_) *
           (p_.col(k) * q_.col(k).transpose() + q_.col(k) * p_.col(k).transpose());
  }

  /// max_k |E_k|_2 = (s/2)(1 + |p_k . q_k|)
  double max_norm() const {
    double m = 0.0;
    for (Eigen::Index k = 0; k < p_.cols(); ++k)
      m = std::max(m, half_scale_ * (1.0 + std::abs(p_.col(k).dot(q_.col(k)))));
    return m;
  }

 private:
  Matrix p_;
  Matrix q_;
  double half_scale_ = 0.0;
};

inline void check_spectrum(const Vector& spectrum, Eigen::Index d) {
  if (spectrum.size() != d)
    throw ParameterError("spectrum length must equal the dimension");
  for (Eigen::Index j = 1; j < d; ++j)
    if (spectrum[j] > spectrum[j - 1])
      throw ParameterError("spectrum must be sorted in descending order");
  if (!(spectrum[0] - spectrum[1] > 0.0))
    throw ParameterError("spectrum needs an eigengap lambda_1 - lambda_2 > 0");
}

}  // namespace detail

struct RayleighSpec {
  Eigen::Index d = 3;
  std::uint64_t n = 1;
  Vector spectrum;
  double noise_scale = 0.0;
  /// Seed of the component perturbations.
  std::uint64_t seed = 1;
  /// Seed of the eigenbasis rotation Q; 0 keeps the coordinate basis.
  std::uint64_t rotation_seed = 0;
  double ball_radius = 0.5;
  double c0 = 1.0;
};

class RayleighObjective final : public FiniteSumObjective {
 public:
  explicit RayleighObjective(RayleighSpec spec)
      : FiniteSumObjective(std::make_shared<Sphere>(spec.d, spec.ball_radius, spec.c0)),
        spec_(std::move(spec)) {
    detail::check_spectrum(spec_.spectrum, spec_.d);
    if (spec_.n < 1) throw ParameterError("rayleigh: need n >= 1");
    q_ = random_orthogonal(spec_.d, spec_.rotation_seed);
    if (spec_.rotation_seed == 0) {
      abar_ = spec_.spectrum.asDiagonal();
    } else {
      abar_ = q_ * spec_.spectrum.asDiagonal() * q_.transpose();
      abar_ = 0.5 * (abar_ + abar_.transpose()).eval();
    }
    noise_ = detail::AntitheticNoise(spec_.d, spec_.n, spec_.noise_scale,
                                     Rng(spec_.seed).split(Stream::Sample, 1));
  }

  const RayleighSpec& spec() const { return spec_; }
  const Matrix& mean_matrix() const { return abar_; }
  const Matrix& rotation() const { return q_; }
  /// k-th eigenvector of Abar (0-based): v_1 is eigenvector(0).
  Vector eigenvector(Eigen::Index k) const { return q_.col(k); }
  Matrix component_matrix(ComponentIndex i) const {
    return abar_ + noise_.dense(i, spec_.d);
  }

  std::optional<std::uint64_t> size() const override { return spec_.n; }

  double value(const Vector& x) const override { return -x.dot(abar_ * x); }

  double component_value(ComponentIndex i, const Vector& x) const override {
    return -x.dot(abar_ * x) - noise_.quad(i, x);
  }

  Vector component_grad(ComponentIndex i, const Vector& x) const override {
    return project(x, -2.0 * (abar_x(x) + noise_.apply(i, x)));
  }

  Vector batch_grad(std::span<const ComponentIndex> idx,
                    const Vector& x) const override {
    return project(x, -2.0 * (abar_x(x) + noise_.mean_apply(idx, x)));
  }

  Vector full_grad(const Vector& x) const override {
    return project(x, -2.0 * abar_x(x));
  }

  /// 2 max_i |E_i| bounds |grad f_i - grad F| at any point of the sphere and,
  /// since |T_u^*| <= 1 for the projection retraction, for pullback
  /// gradients too.
  std::optional<double> sigma_hint() const override {
    return 2.0 * noise_.max_norm();
  }

  /// Riemannian Hessian of F at x applied to tangent v:
  /// P_x(-2 Abar v) + 2 (x^T Abar x) v.
  Vector riemannian_hessian(const Vector& x, const Vector& v) const {
    return project(x, -2.0 * (abar_ * v)) + 2.0 * x.dot(abar_ * x) * v;
  }

  /// Hessian eigenvalues at eigenvector k: 2 (lambda_k - lambda_j), j != k.
  Vector hessian_eigenvalues_at(Eigen::Index k) const {
    Vector out(spec_.d - 1);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < spec_.d; ++j)
      if (j != k) out[c++] = 2.0 * (spec_.spectrum[k] - spec_.spectrum[j]);
    return out;
  }

 private:
  Vector abar_x(const Vector& x) const {
    if (spec_.rotation_seed == 0) return spec_.spectrum.cwiseProduct(x);
    return abar_ * x;
  }
  static Vector project(const Vector& x, const Vector& a) { return a - x.dot(a) * x; }

  RayleighSpec spec_;
  Matrix q_;
  Matrix abar_;
  detail::AntitheticNoise noise_;
};

inline std::shared_ptr<RayleighObjective> make_rayleigh(
    Eigen::Index d, std::uint64_t n, const Vector& spectrum, double noise_scale,
    std::uint64_t seed, std::uint64_t rotation_seed = 0) {
  return std::make_shared<RayleighObjective>(
      RayleighSpec{d, n, spectrum, noise_scale, seed, rotation_seed});
}

/// Online Rayleigh problem: f(x; w) = -(a_w^T x)^2 with a_w = Q diag(sqrt(lambda)) g_w,
/// g_w ~ N(0, I) drawn from the sample id w, so E[a a^T] = Abar.
class StreamingRayleighObjective final : public FiniteSumObjective {
 public:
  StreamingRayleighObjective(Eigen::Index d, Vector spectrum, std::uint64_t seed,
                             std::uint64_t rotation_seed = 0, double ball_radius = 0.5,
                             double c0 = 1.0)
      : FiniteSumObjective(std::make_shared<Sphere>(d, ball_radius, c0)),
        spectrum_(std::move(spectrum)),
        seed_(seed),
        rotation_seed_(rotation_seed) {
    detail::check_spectrum(spectrum_, d);
    if (spectrum_.minCoeff() < 0.0)
      throw ParameterError("streaming rayleigh: spectrum must be nonnegative");
    q_ = random_orthogonal(d, rotation_seed);
    abar_ = q_ * spectrum_.asDiagonal() * q_.transpose();
    abar_ = 0.5 * (abar_ + abar_.transpose()).eval();
    sqrt_spectrum_ = spectrum_.cwiseSqrt();
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t rotation_seed() const { return rotation_seed_; }
  const Vector& spectrum() const { return spectrum_; }
  const Matrix& mean_matrix() const { return abar_; }
  Vector eigenvector(Eigen::Index k) const { return q_.col(k); }

  Vector sample(ComponentIndex w) const {
    Rng rng = Rng(seed_).split(Stream::Sample, w);
    Vector g(spectrum_.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = rng.normal();
    if (rotation_seed_ == 0) return sqrt_spectrum_.cwiseProduct(g);
    return q_ * sqrt_spectrum_.cwiseProduct(g);
  }

  std::optional<std::uint64_t> size() const override { return std::nullopt; }

  double value(const Vector& x) const override { return -x.dot(abar_ * x); }

  double component_value(ComponentIndex w, const Vector& x) const override {
    const double t = sample(w).dot(x);
    return -t * t;
  }

  Vector component_grad(ComponentIndex w, const Vector& x) const override {
    const Vector a = sample(w);
    const Vector g = -2.0 * a * a.dot(x);
    return g - x.dot(g) * x;
  }

  Vector full_grad(const Vector& x) const override {
    const Vector g = -2.0 * (abar_ * x);
    return g - x.dot(g) * x;
  }

  /// Root-mean-square deviation sup_x sqrt(E|grad f_w - grad F|^2), from
  /// E[|P a|^2 (a^T x)^2] = tr(P S P)(x^T S x) + 2|P S x|^2 for Gaussian a.
  std::optional<double> sigma_hint() const override {
    const double l1 = spectrum_[0];
    return 2.0 * std::sqrt(spectrum_.sum() * l1 + l1 * l1);
  }

  /// sqrt(E|grad f_w(x) - grad F(x)|^2) at a specific x.
  double sigma_at(const Vector& x) const {
    const Matrix p = Matrix::Identity(x.size(), x.size()) - x * x.transpose();
    const Vector psx = p * (abar_ * x);
    const double tr = (p * abar_ * p).trace();
    return 2.0 * std::sqrt(tr * x.dot(abar_ * x) + psx.squaredNorm());
  }

 private:
  Vector spectrum_;
  Vector sqrt_spectrum_;
  std::uint64_t seed_;
  std::uint64_t rotation_seed_;
  Matrix q_;
  Matrix abar_;
};

struct QuadraticSpec {
  Eigen::Index d = 2;
  /// Eigenvalues of H in the order of the columns of Q.
  Vector eigenvalues;
  std::uint64_t n = 1;
  double noise_scale = 0.0;
  std::uint64_t seed = 1;
  double ball_radius = 1e9;
};

/// F(u) = 1/2 u^T H u on R^d, H = Q diag(eigenvalues) Q^T, split into n
/// components H_i = H + E_i with zero-mean perturbations.
class QuadraticObjective final : public FiniteSumObjective {
 public:
  explicit QuadraticObjective(QuadraticSpec spec)
      : FiniteSumObjective(std::make_shared<Euclidean>(spec.d, spec.ball_radius)),
        spec_(std::move(spec)) {
    if (spec_.eigenvalues.size() != spec_.d)
      throw ParameterError("quadratic: eigenvalue count must equal d");
    if (spec_.n < 1) throw ParameterError("quadratic: need n >= 1");
    q_ = random_orthogonal(spec_.d, spec_.seed);
    h_ = q_ * spec_.eigenvalues.asDiagonal() * q_.transpose();
    h_ = 0.5 * (h_ + h_.transpose()).eval();
    noise_ = detail::AntitheticNoise(spec_.d, spec_.n, spec_.noise_scale,
                                     Rng(spec_.seed).split(Stream::Sample, 2));
  }

  const QuadraticSpec& spec() const { return spec_; }
  const Matrix& hessian() const { return h_; }
  Matrix component_hessian(ComponentIndex i) const { return h_ + noise_.dense(i, spec_.d); }
  Vector eigenvector(Eigen::Index k) const { return q_.col(k); }
  double lambda_min() const { return spec_.eigenvalues.minCoeff(); }

  std::optional<std::uint64_t> size() const override { return spec_.n; }

  double value(const Vector& u) const override { return 0.5 * u.dot(h_ * u); }
  double component_value(ComponentIndex i, const Vector& u) const override {
    return 0.5 * (u.dot(h_ * u) + noise_.quad(i, u));
  }
  Vector component_grad(ComponentIndex i, const Vector& u) const override {
    return h_ * u + noise_.apply(i, u);
  }
  Vector batch_grad(std::span<const ComponentIndex> idx,
                    const Vector& u) const override {
    return h_ * u + noise_.mean_apply(idx, u);
  }
  Vector full_grad(const Vector& u) const override { return h_ * u; }

 private:
  QuadraticSpec spec_;
  Matrix q_;
  Matrix h_;
  detail::AntitheticNoise noise_;
};

inline std::shared_ptr<QuadraticObjective> make_quadratic(
    Eigen::Index d, const Vector& eigenvalues, std::uint64_t n, double noise_scale,
    std::uint64_t seed, double ball_radius = 1e9) {
  return std::make_shared<QuadraticObjective>(
      QuadraticSpec{d, eigenvalues, n, noise_scale, seed, ball_radius});
}

/// H = Q diag(-gamma, L_top/(d-1), 2 L_top/(d-1), ..., L_top) Q^T; the
/// smallest eigenvector e_1 is eigenvector(0).
inline std::shared_ptr<QuadraticObjective> make_quadratic_saddle(
    Eigen::Index d, double gamma, double L_top, std::uint64_t n, std::uint64_t seed,
    double noise_scale = 0.0, double ball_radius = 1e9) {
  if (!(gamma > 0.0)) throw ParameterError("quadratic saddle: gamma must be > 0");
  if (!(L_top > 0.0)) throw ParameterError("quadratic saddle: L_top must be > 0");
  if (d < 1) throw ParameterError("quadratic saddle: need d >= 1");
  Vector ev(d);
  ev[0] = -gamma;
  for (Eigen::Index j = 1; j < d; ++j)
    ev[j] = L_top * static_cast<double>(j) / static_cast<double>(d - 1);
  return make_quadratic(d, ev, n, noise_scale, seed, ball_radius);
}

/// PCA-type objective on data rows a_i: f_i(X) = -|X^T a_i|^2 on the sphere
/// (p = 1) or St(N, p).
class DataPcaObjective final : public FiniteSumObjective {
 public:
  DataPcaObjective(std::shared_ptr<const Manifold> manifold, Matrix data)
      : FiniteSumObjective(std::move(manifold)), data_(std::move(data)) {
    const Eigen::Index ambient = this->manifold().ambient_dim();
    if (const auto* st = dynamic_cast<const Stiefel*>(&this->manifold())) {
      rows_ = st->rows();
      cols_ = st->cols();
    } else if (dynamic_cast<const Sphere*>(&this->manifold())) {
      rows_ = ambient;
      cols_ = 1;
    } else {
      throw ParameterError("pca objective needs a sphere or Stiefel manifold");
    }
    if (data_.cols() != rows_)
      throw ParameterError("pca data has " + std::to_string(data_.cols()) +
                           " columns, manifold needs " + std::to_string(rows_));
    if (data_.rows() < 1) throw ParameterError("pca data has no rows");
    cov_ = data_.transpose() * data_ / static_cast<double>(data_.rows());
  }

  const Matrix& data() const { return data_; }
  const Matrix& covariance() const { return cov_; }

  std::optional<std::uint64_t> size() const override {
    return static_cast<std::uint64_t>(data_.rows());
  }

  double value(const Vector& x) const override {
    const auto X = Eigen::Map<const Matrix>(x.data(), rows_, cols_);
    return -(X.transpose() * cov_ * X).trace();
  }

  double component_value(ComponentIndex i, const Vector& x) const override {
    const auto X = Eigen::Map<const Matrix>(x.data(), rows_, cols_);
    return -(X.transpose() * data_.row(static_cast<Eigen::Index>(i)).transpose()).squaredNorm();
  }

  Vector component_grad(ComponentIndex i, const Vector& x) const override {
    const auto X = Eigen::Map<const Matrix>(x.data(), rows_, cols_);
    const Vector a = data_.row(static_cast<Eigen::Index>(i)).transpose();
    const Matrix g = -2.0 * a * (a.transpose() * X);
    return manifold().project_tangent(x, Eigen::Map<const Vector>(g.data(), g.size()));
  }

  Vector full_grad(const Vector& x) const override {
    const auto X = Eigen::Map<const Matrix>(x.data(), rows_, cols_);
    const Matrix g = -2.0 * cov_ * X;
    return manifold().project_tangent(x, Eigen::Map<const Vector>(g.data(), g.size()));
  }

  std::optional<double> sigma_hint() const override {
    return 2.0 * (data_.rowwise().squaredNorm().maxCoeff() +
                  Eigen::SelfAdjointEigenSolver<Matrix>(cov_).eigenvalues().maxCoeff());
  }

 private:
  Matrix data_;
  Matrix cov_;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
};

/// Gaussian data with covariance Q diag(spectrum) Q^T, for PCA experiments.
inline Matrix gaussian_data(std::uint64_t rows, const Vector& spectrum,
                            std::uint64_t seed, std::uint64_t rotation_seed = 0) {
  const Matrix q = random_orthogonal(spectrum.size(), rotation_seed);
  const Vector scale = spectrum.cwiseMax(0.0).cwiseSqrt();
  Matrix data(static_cast<Eigen::Index>(rows), spectrum.size());
  for (std::uint64_t i = 0; i < rows; ++i) {
    Rng rng = Rng(seed).split(Stream::Sample, i);
    Vector g(spectrum.size());
    for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = rng.normal();
    data.row(static_cast<Eigen::Index>(i)) = (q * scale.cwiseProduct(g)).transpose();
  }
  return data;
}

}  // namespace prsrg
