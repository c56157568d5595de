#pragma once

// Comparators sharing the solver's query accounting and trace schema.
//
//  prgd:              full-gradient steps on the manifold; at a small-gradient
//                     point that fails certification, perturb in the tangent
//                     space and take escape_steps pullback gradient steps
//                     before retracting.
//  rsgd:              x <- R_x(-eta grad f_I(x)) with a full-gradient check
//                     every ceil(n / batch) steps.
//  rsrg_unperturbed:  the main solver with r = 0.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "prsrg/certify.hpp"
#include "prsrg/errors.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/solver.hpp"
#include "prsrg/trace.hpp"

namespace prsrg {

enum class BaselineKind { Prgd, Rsgd, RsrgUnperturbed };

inline std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Prgd: return "prgd";
    case BaselineKind::Rsgd: return "rsgd";
    case BaselineKind::RsrgUnperturbed: return "rsrg_unperturbed";
  }
  return "?";
}

struct BaselineConfig {
  BaselineKind kind = BaselineKind::Prgd;
  double eta = 0.1;
  double r = 0.0;
  std::uint64_t escape_steps = 10;
  std::uint64_t batch = 1;
  /// Large batch for the gradient check; 0 means all n components.
  std::uint64_t check_batch = 0;
  std::uint64_t max_iterations = std::numeric_limits<std::uint64_t>::max();

  void validate() const {
    if (!(eta > 0.0)) throw ParameterError("baseline eta must be positive");
    if (!(r >= 0.0)) throw ParameterError("baseline r must be >= 0");
    if (batch < 1) throw ParameterError("baseline batch must be >= 1");
  }
};

namespace detail {

inline std::uint64_t full_batch(const FiniteSumObjective& obj, std::uint64_t requested) {
  if (requested > 0) return requested;
  if (const auto n = obj.size()) return *n;
  throw ParameterError("streaming objectives need an explicit check batch");
}

inline TraceRow baseline_row(std::uint64_t t, std::uint64_t k, double f, double g,
                             double u_norm, std::uint64_t q, std::string event) {
  TraceRow row;
  row.outer_t = t;
  row.inner_k = k;
  row.epoch_type = EpochType::Baseline;
  row.F_value = f;
  row.grad_norm_or_batch = g;
  row.u_norm = u_norm;
  row.queries_cum = q;
  row.event = std::move(event);
  return row;
}

}  // namespace detail

inline SolverReport baseline_prgd(const std::shared_ptr<const FiniteSumObjective>& objective,
                                  const ManifoldPoint& x0, const BaselineConfig& cfg,
                                  double epsilon, double delta, std::uint64_t budget,
                                  const Rng& rng, const CertifyOptions& copt = {}) {
  const Manifold& mf = objective->manifold();
  const std::uint64_t full = detail::full_batch(*objective, cfg.check_batch);
  const Vector zero = Vector::Zero(mf.ambient_dim());
  SolverReport rep;
  rep.algorithm = "prgd";
  rep.budget = budget;
  rep.best_point = x0;
  rep.best_value = objective->value(x0.coords);
  ManifoldPoint x = x0;
  double fx = rep.best_value;
  std::uint64_t used = 0;
  std::optional<std::pair<Vector, Certification>> cache;
  rep.stop = StopReason::Budget;
  std::uint64_t t = 0;
  for (; t < cfg.max_iterations; ++t) {
    if (used + full > budget) break;
    PullbackOracle oracle(objective, x);
    Rng grng = rng.split(Stream::Outer, t).split(Stream::Check, 0);
    const Vector g = oracle.grad_largebatch(full, zero, grng);
    used += full;
    ++rep.checks;
    const double gn = g.norm();
    if (gn <= epsilon) {
      Certification cert;
      if (cache && cache->first == x.coords) {
        cert = cache->second;
      } else {
        cert = certify(PullbackOracle(objective, x), epsilon, delta, copt);
        cache.emplace(x.coords, cert);
      }
      rep.trace.push(detail::baseline_row(t, 0, fx, gn, 0.0, used,
                                          cert.passed ? "certify_pass" : "certify_fail"));
      if (cert.passed) {
        rep.certified = cert;
        rep.certified_point = x;
        rep.queries_to_certification = used;
        rep.stop = StopReason::Certified;
        ++t;
        break;
      }
      if (used + cfg.escape_steps * full > budget) {
        ++t;
        break;
      }
      Rng prng = rng.split(Stream::Outer, t).split(Stream::Perturb, 0);
      Vector u = mf.sample_ball(x, std::min(cfg.r, mf.ball_radius()), prng).coords;
      const double f_start = fx;
      std::uint64_t k = 0;
      for (; k < cfg.escape_steps; ++k) {
        Rng erng = rng.split(Stream::Outer, t).split(Stream::Epoch, k);
        const Vector gu = oracle.grad_largebatch(full, u, erng);
        used += full;
        Vector next = u - cfg.eta * gu;
        if (!next.allFinite()) throw NumericalFailure(k, "prgd escape step");
        if (next.norm() >= mf.ball_radius()) {
          u = u - boundary_alpha(u, cfg.eta * gu, mf.ball_radius()) * cfg.eta * gu;
          ++k;
          break;
        }
        u = std::move(next);
      }
      x = ManifoldPoint{oracle.point_at(u), mf.id()};
      fx = objective->value(x.coords);
      rep.trace.push(detail::baseline_row(t, k, fx, gn, u.norm(), used, "escape"));
      EscapeEpisode epi;
      epi.outer_t = t;
      epi.value_start = f_start;
      epi.value_end = fx;
      epi.lambda_min = cert.lambda_min_estimate;
      epi.certified_saddle = !cert.hessian_skipped;
      epi.iterations = k;
      rep.escapes.push_back(epi);
      rep.epochs.add(EpochType::Baseline);
    } else {
      Vector step = -cfg.eta * g;
      if (step.norm() > mf.ball_radius()) step *= mf.ball_radius() / step.norm();
      x = ManifoldPoint{oracle.point_at(step), mf.id()};
      if (!x.coords.allFinite()) throw NumericalFailure(t, "prgd step");
      fx = objective->value(x.coords);
      rep.trace.push(detail::baseline_row(t, 1, fx, gn, step.norm(), used, "step"));
    }
    if (fx < rep.best_value) {
      rep.best_value = fx;
      rep.best_point = x;
    }
  }
  if (t >= cfg.max_iterations && rep.stop != StopReason::Certified) rep.stop = StopReason::MaxOuter;
  rep.outer_iterations = t;
  rep.queries_used = used;
  rep.final_point = x;
  rep.final_value = fx;
  return rep;
}

inline SolverReport baseline_rsgd(const std::shared_ptr<const FiniteSumObjective>& objective,
                                  const ManifoldPoint& x0, const BaselineConfig& cfg,
                                  double epsilon, double delta, std::uint64_t budget,
                                  const Rng& rng, const CertifyOptions& copt = {}) {
  const Manifold& mf = objective->manifold();
  const std::uint64_t full = detail::full_batch(*objective, cfg.check_batch);
  const std::uint64_t every = std::max<std::uint64_t>(1, (full + cfg.batch - 1) / cfg.batch);
  const Vector zero = Vector::Zero(mf.ambient_dim());
  SolverReport rep;
  rep.algorithm = "rsgd";
  rep.budget = budget;
  rep.best_point = x0;
  rep.best_value = objective->value(x0.coords);
  ManifoldPoint x = x0;
  double fx = rep.best_value;
  std::uint64_t used = 0;
  rep.stop = StopReason::Budget;
  std::uint64_t t = 0;
  for (; t < cfg.max_iterations; ++t) {
    const Rng trng = rng.split(Stream::Outer, t);
    PullbackOracle oracle(objective, x);
    if (t % every == 0) {
      if (used + full > budget) break;
      Rng crng = trng.split(Stream::Check, 0);
      const double gn = oracle.grad_largebatch(full, zero, crng).norm();
      used += full;
      ++rep.checks;
      if (gn <= epsilon) {
        const Certification cert = certify(PullbackOracle(objective, x), epsilon, delta, copt);
        rep.trace.push(detail::baseline_row(t, 0, fx, gn, 0.0, used,
                                            cert.passed ? "certify_pass" : "certify_fail"));
        if (cert.passed) {
          rep.certified = cert;
          rep.certified_point = x;
          rep.queries_to_certification = used;
          rep.stop = StopReason::Certified;
          ++t;
          break;
        }
      } else {
        rep.trace.push(detail::baseline_row(t, 0, fx, gn, 0.0, used, "check"));
      }
    }
    if (used + std::min(cfg.batch, full) > budget) break;
    Rng brng = trng.split(Stream::MiniBatch, 0);
    const auto idx = oracle.draw_minibatch(cfg.batch, brng);
    const Vector g = oracle.grad_minibatch(idx, zero);
    used += idx.size();
    Vector step = -cfg.eta * g;
    if (step.norm() > mf.ball_radius()) step *= mf.ball_radius() / step.norm();
    x = ManifoldPoint{oracle.point_at(step), mf.id()};
    if (!x.coords.allFinite()) throw NumericalFailure(t, "rsgd step");
    fx = objective->value(x.coords);
    if (fx < rep.best_value) {
      rep.best_value = fx;
      rep.best_point = x;
    }
  }
  if (t >= cfg.max_iterations && rep.stop != StopReason::Certified) rep.stop = StopReason::MaxOuter;
  rep.trace.push(detail::baseline_row(t, 0, fx, 0.0, 0.0, used, "end"));
  rep.epochs.add(EpochType::Baseline);
  rep.outer_iterations = t;
  rep.queries_used = used;
  rep.final_point = x;
  rep.final_value = fx;
  return rep;
}

inline SolverReport baseline_rsrg_unperturbed(
    const std::shared_ptr<const FiniteSumObjective>& objective, const ManifoldPoint& x0,
    SolverParams params, const Rng& rng, const SolverOptions& opt = {}) {
  params.r = 0.0;
  SolverReport rep = prsrg_run(objective, x0, params, rng, opt);
  rep.algorithm = "rsrg_unperturbed";
  return rep;
}

/// Dispatches on cfg.kind. rsrg_unperturbed takes its schedule from
/// rsrg_params with epsilon, delta and budget overridden.
inline SolverReport baseline_run(const std::shared_ptr<const FiniteSumObjective>& objective,
                                 const ManifoldPoint& x0, const BaselineConfig& cfg,
                                 double epsilon, double delta, std::uint64_t budget,
                                 const Rng& rng, SolverParams rsrg_params = {},
                                 const SolverOptions& opt = {}) {
  cfg.validate();
  switch (cfg.kind) {
    case BaselineKind::Prgd:
      return baseline_prgd(objective, x0, cfg, epsilon, delta, budget, rng, opt.certify);
    case BaselineKind::Rsgd:
      return baseline_rsgd(objective, x0, cfg, epsilon, delta, budget, rng, opt.certify);
    case BaselineKind::RsrgUnperturbed:
      rsrg_params.epsilon = epsilon;
      rsrg_params.delta = delta;
      rsrg_params.budget = budget;
      return baseline_rsrg_unperturbed(objective, x0, std::move(rsrg_params), rng, opt);
  }
  throw ParameterError("unknown baseline kind");
}

}  // namespace prsrg
