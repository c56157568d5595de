#pragma once

// Pullback oracle anchored at a point x of the manifold.
//
// Tangent vectors at the anchor are handled in ambient coordinates. The
// counted calls (mini-batch and large-batch gradients) increment a query
// counter by the number of component gradients they consume; the exact
// gradient, values and Hessian-vector products are diagnostics and are not
// counted.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prsrg/errors.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/objective.hpp"
#include "prsrg/random.hpp"

namespace prsrg {

inline constexpr double kHvpStep = 1e-4;

class PullbackOracle {
 public:
  PullbackOracle(std::shared_ptr<const FiniteSumObjective> objective, ManifoldPoint anchor)
      : objective_(std::move(objective)), anchor_(std::move(anchor)) {
    manifold().check_point(anchor_);
  }

  PullbackOracle(const PullbackOracle& other)
      : objective_(other.objective_), anchor_(other.anchor_), queries_(other.queries()) {}

  const FiniteSumObjective& objective() const { return *objective_; }
  const std::shared_ptr<const FiniteSumObjective>& objective_ptr() const { return objective_; }
  const Manifold& manifold() const { return objective_->manifold(); }
  const ManifoldPoint& anchor() const { return anchor_; }
  std::optional<std::uint64_t> size() const { return objective_->size(); }

  std::uint64_t queries() const { return queries_.load(std::memory_order_relaxed); }
  void reset_queries() { queries_.store(0, std::memory_order_relaxed); }
  void add_queries(std::uint64_t q) { queries_.fetch_add(q, std::memory_order_relaxed); }

  // Unchecked ambient-coordinate interface used by the solvers.

  Vector point_at(const Vector& u) const {
    if (u.isZero(0.0)) return anchor_.coords;
    return manifold().retract_raw(anchor_.coords, u);
  }

  double value(const Vector& u) const { return objective_->value(point_at(u)); }

  /// (1/|I|) sum_{i in I} T_u^* grad f_i(R_x(u)), not counted.
  Vector batch_grad(std::span<const ComponentIndex> idx, const Vector& u) const {
    if (idx.empty()) throw EmptyBatch();
    return pull(u, objective_->batch_grad(idx, point_at(u)));
  }

  /// Counted mini-batch gradient.
  Vector grad_minibatch(std::span<const ComponentIndex> idx, const Vector& u) {
    Vector g = batch_grad(idx, u);
    add_queries(idx.size());
    return g;
  }

  /// Counted large-batch gradient: B components without replacement, or all
  /// n in index order when B = n.
  Vector grad_largebatch(std::uint64_t batch, const Vector& u, Rng& rng) {
    const auto idx = draw_largebatch(batch, rng);
    return grad_minibatch(idx, u);
  }

  /// Exact pullback gradient grad F-hat_x(u), not counted.
  Vector grad_exact(const Vector& u) const {
    return pull(u, objective_->full_grad(point_at(u)));
  }

  Vector component_grad(ComponentIndex i, const Vector& u) const {
    return pull(u, objective_->component_grad(i, point_at(u)));
  }

  /// Hessian of the pullback at u applied to v by central differences of the
  /// exact gradient along v/|v| with step kHvpStep, rescaled by |v|.
  Vector hvp(const Vector& u, const Vector& v) const {
    return fd_hessian(u, v, [this](const Vector& w) { return grad_exact(w); });
  }

  Vector component_hvp(ComponentIndex i, const Vector& u, const Vector& v) const {
    return fd_hessian(u, v, [this, i](const Vector& w) { return component_grad(i, w); });
  }

  /// I.i.d. indices with replacement; a finite-sum batch of size >= n is the
  /// whole index set, so b = n gives the exact gradient.
  std::vector<ComponentIndex> draw_minibatch(std::uint64_t b, Rng& rng) const {
    if (b == 0) throw EmptyBatch();
    if (const auto n = size(); n && b >= *n) return iota(*n);
    std::vector<ComponentIndex> idx(b);
    for (auto& i : idx) i = objective_->draw_index(rng);
    return idx;
  }

  std::vector<ComponentIndex> draw_largebatch(std::uint64_t batch, Rng& rng) const {
    if (batch == 0) throw EmptyBatch();
    const auto n = size();
    if (!n) {
      std::vector<ComponentIndex> idx(batch);
      for (auto& i : idx) i = rng();
      return idx;
    }
    if (batch > *n) throw BatchTooLarge(batch, *n);
    if (batch == *n) return iota(*n);
    // Partial Fisher-Yates over a sparse permutation.
    std::unordered_map<std::uint64_t, std::uint64_t> swapped;
    swapped.reserve(static_cast<std::size_t>(2 * batch));
    auto at = [&](std::uint64_t k) {
      const auto it = swapped.find(k);
      return it == swapped.end() ? k : it->second;
    };
    std::vector<ComponentIndex> idx(batch);
    for (std::uint64_t k = 0; k < batch; ++k) {
      const std::uint64_t j = k + rng.below(*n - k);
      const std::uint64_t vj = at(j);
      swapped[j] = at(k);
      idx[k] = vj;
    }
    return idx;
  }

  // Typed, contract-checked interface.

  double pullback_value(const TangentVector& u) const {
    check(u);
    return value(u.coords);
  }

  TangentVector pullback_grad_minibatch(std::span<const ComponentIndex> idx,
                                        const TangentVector& u) {
    check(u);
    return TangentVector{anchor_, grad_minibatch(idx, u.coords)};
  }

  TangentVector pullback_grad_largebatch(std::uint64_t batch, const TangentVector& u,
                                         Rng& rng) {
    check(u);
    return TangentVector{anchor_, grad_largebatch(batch, u.coords, rng)};
  }

  TangentVector pullback_grad_exact(const TangentVector& u) const {
    check(u);
    return TangentVector{anchor_, grad_exact(u.coords)};
  }

  TangentVector pullback_hvp(const TangentVector& u, const TangentVector& v) const {
    check(u);
    manifold().check_base(anchor_, v);
    return TangentVector{anchor_, hvp(u.coords, v.coords)};
  }

 private:
  static std::vector<ComponentIndex> iota(std::uint64_t n) {
    std::vector<ComponentIndex> all(n);
    std::iota(all.begin(), all.end(), ComponentIndex{0});
    return all;
  }

  Vector pull(const Vector& u, const Vector& w) const {
    if (u.isZero(0.0)) return w;
    return manifold().dretract_adjoint_raw(anchor_.coords, u, w);
  }

  template <class Grad>
  Vector fd_hessian(const Vector& u, const Vector& v, Grad&& grad) const {
    const double vn = v.norm();
    if (vn == 0.0) return Vector::Zero(v.size());
    const Vector dir = v / vn;
    const Vector hi = grad(u + kHvpStep * dir);
    const Vector lo = grad(u - kHvpStep * dir);
    return manifold().project_tangent(anchor_.coords, (hi - lo) * (vn / (2.0 * kHvpStep)));
  }

  void check(const TangentVector& u) const {
    manifold().check_base(anchor_, u);
    manifold().check_ball(u);
  }

  std::shared_ptr<const FiniteSumObjective> objective_;
  ManifoldPoint anchor_;
  std::atomic<std::uint64_t> queries_{0};
};

struct LipschitzOptions {
  std::size_t samples = 200;
  double safety = 1.2;
  /// Components whose Hessian at the anchor gets a power-iteration norm
  /// estimate on top of the random-pair quotients.
  std::size_t power_components = 5;
  std::size_t power_iterations = 20;
  std::optional<double> ell;
  std::optional<double> rho;
};

struct LipschitzEstimate {
  /// Bound on the pullback component Hessians.
  double ell = 0.0;
  /// Lipschitz constant of the pullback component Hessians.
  double rho = 0.0;
  /// Gradient Lipschitz constant inside the ball, ell + rho * D.
  double L = 0.0;
  double max_grad_quotient = 0.0;
  double max_hess_quotient = 0.0;
};

/// Empirical smoothness constants of the pullback components at the oracle's
/// anchor. For random pairs (u, v) in the ball and random components i:
///   grad quotient |g_i(u) - g_i(v)| / |u - v|
///   Hessian quotient |H_i(u) w - H_i(v) w| / |u - v| for a random unit w.
/// Queries made here are not counted.
inline LipschitzEstimate estimate_lipschitz(const PullbackOracle& oracle, Rng rng,
                                            const LipschitzOptions& opt = {}) {
  const Manifold& mf = oracle.manifold();
  const ManifoldPoint& x = oracle.anchor();
  const double D = mf.ball_radius();
  // Sampling radius: the whole ball, capped for effectively unbounded balls.
  const double radius = std::min(D, 1.0);
  LipschitzEstimate est;
  for (std::size_t k = 0; k < opt.samples; ++k) {
    Rng r = rng.split(Stream::Estimate, k);
    const ComponentIndex i = oracle.objective().draw_index(r);
    const Vector u = mf.sample_ball(x, radius, r).coords;
    const Vector v = mf.sample_ball(x, radius, r).coords;
    Vector w = mf.sample_ball(x, 1.0, r).coords;
    const double dist = (u - v).norm();
    if (dist <= 1e-12) continue;
    if (w.norm() > 0) w.normalize();
    const double gq = (oracle.component_grad(i, u) - oracle.component_grad(i, v)).norm() / dist;
    const double hq =
        (oracle.component_hvp(i, u, w) - oracle.component_hvp(i, v, w)).norm() / dist;
    est.max_grad_quotient = std::max(est.max_grad_quotient, gq);
    est.max_hess_quotient = std::max(est.max_hess_quotient, hq);
  }
  const Vector zero = Vector::Zero(mf.ambient_dim());
  for (std::size_t k = 0; k < opt.power_components; ++k) {
    Rng r = rng.split(Stream::Estimate, opt.samples + k);
    const ComponentIndex i = oracle.objective().draw_index(r);
    Vector w = mf.sample_ball(x, 1.0, r).coords;
    if (w.norm() == 0.0) continue;
    w.normalize();
    double lambda = 0.0;
    for (std::size_t it = 0; it < opt.power_iterations; ++it) {
      const Vector hw = oracle.component_hvp(i, zero, w);
      lambda = hw.norm();
      if (lambda == 0.0) break;
      w = hw / lambda;
    }
    est.max_grad_quotient = std::max(est.max_grad_quotient, lambda);
  }
  // Hessian quotients at the level of finite-difference roundoff mean the
  // Hessian is constant.
  if (est.max_hess_quotient <= 1e-6 * std::max(1.0, est.max_grad_quotient))
    est.max_hess_quotient = 0.0;
  est.ell = opt.ell.value_or(opt.safety * est.max_grad_quotient);
  est.rho = opt.rho.value_or(opt.safety * est.max_hess_quotient);
  est.L = est.ell + est.rho * D;
  return est;
}

}  // namespace prsrg
