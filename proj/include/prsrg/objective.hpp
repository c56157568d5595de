#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "prsrg/geometry.hpp"
#include "prsrg/parallel.hpp"
#include "prsrg/random.hpp"

namespace prsrg {

using ComponentIndex = std::uint64_t;

/// F(x) = (1/n) sum_i f_i(x) on a manifold, or E_w[f(x; w)] when streaming.
/// Gradients are Riemannian gradients in ambient coordinates.
class FiniteSumObjective {
 public:
  explicit FiniteSumObjective(std::shared_ptr<const Manifold> manifold)
      : manifold_(std::move(manifold)) {}
  virtual ~FiniteSumObjective() = default;

  const Manifold& manifold() const { return *manifold_; }
  const std::shared_ptr<const Manifold>& manifold_ptr() const { return manifold_; }

  /// Number of components, or nullopt for a streaming objective whose
  /// components are indexed by arbitrary 64-bit sample ids.
  virtual std::optional<std::uint64_t> size() const = 0;
  bool streaming() const { return !size().has_value(); }

  virtual double value(const Vector& x) const = 0;
  virtual double component_value(ComponentIndex i, const Vector& x) const = 0;
  virtual Vector component_grad(ComponentIndex i, const Vector& x) const = 0;

  /// Mean component gradient over a multiset of indices. Components are
  /// evaluated in parallel and summed in index order.
  virtual Vector batch_grad(std::span<const ComponentIndex> idx,
                            const Vector& x) const {
    const Eigen::Index n = x.size();
    Matrix cols(n, static_cast<Eigen::Index>(idx.size()));
    parallel_for(idx.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t k = begin; k < end; ++k)
        cols.col(static_cast<Eigen::Index>(k)) = component_grad(idx[k], x);
    });
    Vector sum = Vector::Zero(n);
    for (Eigen::Index k = 0; k < cols.cols(); ++k) sum += cols.col(k);
    return sum / static_cast<double>(idx.size());
  }

  /// Exact gradient of F: the all-component mean, or for a streaming
  /// objective the mean over a fixed reference batch unless overridden with a
  /// population formula.
  virtual Vector full_grad(const Vector& x) const {
    const std::uint64_t n = size().value_or(reference_batch_size());
    std::vector<ComponentIndex> all(n);
    for (std::uint64_t i = 0; i < n; ++i) all[i] = i;
    return batch_grad(all, x);
  }

  /// Uniform bound sigma on |grad f_i - grad F| when known.
  virtual std::optional<double> sigma_hint() const { return std::nullopt; }

  virtual std::uint64_t reference_batch_size() const { return 16384; }

  ComponentIndex draw_index(Rng& rng) const {
    if (const auto n = size()) return rng.below(*n);
    return rng();
  }

 private:
  std::shared_ptr<const Manifold> manifold_;
};

/// kappa * F, used to check scale consistency of certification.
class ScaledObjective final : public FiniteSumObjective {
 public:
  ScaledObjective(std::shared_ptr<const FiniteSumObjective> inner, double kappa)
      : FiniteSumObjective(inner->manifold_ptr()),
        inner_(std::move(inner)),
        kappa_(kappa) {}

  std::optional<std::uint64_t> size() const override { return inner_->size(); }
  double value(const Vector& x) const override { return kappa_ * inner_->value(x); }
  double component_value(ComponentIndex i, const Vector& x) const override {
    return kappa_ * inner_->component_value(i, x);
  }
  Vector component_grad(ComponentIndex i, const Vector& x) const override {
    return kappa_ * inner_->component_grad(i, x);
  }
  Vector batch_grad(std::span<const ComponentIndex> idx,
                    const Vector& x) const override {
    return kappa_ * inner_->batch_grad(idx, x);
  }
  Vector full_grad(const Vector& x) const override {
    return kappa_ * inner_->full_grad(x);
  }
  std::optional<double> sigma_hint() const override {
    if (auto s = inner_->sigma_hint()) return std::abs(kappa_) * *s;
    return std::nullopt;
  }

 private:
  std::shared_ptr<const FiniteSumObjective> inner_;
  double kappa_;
};

}  // namespace prsrg
