#pragma once

// Tangent-space stochastic recursive gradient epochs.
//
// All iterates live in the tangent space at the oracle's anchor. Each epoch
// starts from a large-batch gradient; inner steps update the estimator by
// the mini-batch gradient difference between consecutive iterates. A run
// ends when an iterate would leave the ball of radius D (Boundary), when the
// uniform break fires in an unperturbed run (UniformBreak), or after T_max
// inner steps (MaxIter).
//
// Randomness is keyed by step index: the anchor of epoch s uses
// rng.split(Anchor, s), the mini-batch of step t rng.split(MiniBatch, t) and
// the break draw of step t rng.split(Break, t). Two runs handed the same rng
// therefore consume identical draws.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prsrg/errors.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/random.hpp"

namespace prsrg {

struct TssrgParams {
  double eta = 0.1;
  std::uint64_t m = 1;
  std::uint64_t b = 1;
  std::uint64_t B = 1;
  double D = 0.5;
  std::uint64_t T_max = 1;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ParameterError("eta must be positive");
    if (m < 1) throw ParameterError("m must be >= 1");
    if (b < 1) throw ParameterError("b must be >= 1");
    if (B < 1) throw ParameterError("B must be >= 1");
    if (!(D > 0.0)) throw ParameterError("D must be positive");
    if (T_max < 1) throw ParameterError("T_max must be >= 1");
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    if (b < m) w.emplace_back("mini-batch size b is smaller than the epoch length m");
    return w;
  }
};

enum class ExitKind { Boundary, UniformBreak, MaxIter };

inline std::string_view to_string(ExitKind e) {
  switch (e) {
    case ExitKind::Boundary: return "boundary";
    case ExitKind::UniformBreak: return "break";
    case ExitKind::MaxIter: return "max_iter";
  }
  return "?";
}

enum class StepEvent { Anchor, Step, Boundary, Break, MaxIter };

inline std::string_view to_string(StepEvent e) {
  switch (e) {
    case StepEvent::Anchor: return "anchor";
    case StepEvent::Step: return "step";
    case StepEvent::Boundary: return "boundary";
    case StepEvent::Break: return "break";
    case StepEvent::MaxIter: return "max_iter";
  }
  return "?";
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct StepRecord {
  std::uint64_t t = 0;
  std::uint64_t k = 0;
  std::uint64_t epoch = 0;
  double value = kNaN;
  double u_norm = 0.0;
  double step_norm = 0.0;
  double drift = 0.0;
  double v_norm = 0.0;
  /// |v_t - grad F-hat(u_t)|, NaN unless exact gaps were requested.
  double estimator_gap = kNaN;
  double grad_norm = kNaN;
  std::uint64_t queries = 0;
  StepEvent event = StepEvent::Step;
};

struct TssrgOptions {
  bool record = false;
  /// Also measure the estimator gap and the exact gradient norm per step.
  bool exact_gap = false;
  bool keep_iterates = false;
  /// Gradient at u0 already computed (and counted) by the caller; used as
  /// the first anchor instead of a fresh large batch.
  std::optional<Vector> initial_anchor;
};

struct TssrgOutcome {
  ManifoldPoint result;
  TangentVector u_final;
  ExitKind exit = ExitKind::MaxIter;
  std::uint64_t iterations = 0;
  bool perturbed = false;
  double alpha = kNaN;
  double value_start = kNaN;
  double value_end = kNaN;
  std::uint64_t queries = 0;
  std::uint64_t anchors = 0;
  /// |v_t| after each inner update, t = 1..iterations (boundary step excluded).
  std::vector<double> v_norms;
  std::vector<StepRecord> steps;
  /// u_0, u_1, ..., u_final when requested.
  std::vector<Vector> iterates;
};

/// Positive root alpha of |a - alpha c| = D, clamped to (0, 1]. Requires
/// |a| <= D and c != 0.
inline double boundary_alpha(const Vector& a, const Vector& c, double D) {
  const double cc = c.squaredNorm();
  const double ac = a.dot(c);
  const double gap = std::max(0.0, D * D - a.squaredNorm());
  const double root = std::sqrt(ac * ac + cc * gap);
  double alpha = ac > 0.0 ? (ac + root) / cc : gap / (root - ac);
  if (!(alpha > 0.0)) alpha = std::numeric_limits<double>::min();
  return std::min(alpha, 1.0);
}

namespace detail {

inline void guard_finite(const Vector& v, std::uint64_t t, const char* what) {
  if (!v.allFinite()) throw NumericalFailure(t, what);
}

}  // namespace detail

inline TssrgOutcome tssrg_run(PullbackOracle& oracle, const Vector& u0,
                              const TssrgParams& p, const Rng& rng,
                              const TssrgOptions& opt = {}) {
  p.validate();
  const Manifold& mf = oracle.manifold();
  if (u0.size() != mf.ambient_dim())
    throw ContractViolation("tssrg: initial vector has wrong dimension");
  if (u0.norm() > p.D * (1.0 + 1e-10)) throw OutOfBall(u0.norm(), p.D);

  const std::uint64_t q_begin = oracle.queries();
  TssrgOutcome out;
  out.perturbed = !u0.isZero(0.0);
  out.value_start = oracle.value(u0);
  if (opt.keep_iterates) out.iterates.push_back(u0);

  Vector u = u0;
  Vector v;
  double value_u = out.value_start;

  auto record = [&](std::uint64_t t, std::uint64_t k, std::uint64_t s, const Vector& ut,
                    double step_norm, const Vector* vt, StepEvent ev, double value) {
    if (!opt.record) return;
    StepRecord r;
    r.t = t;
    r.k = k;
    r.epoch = s;
    r.value = value;
    r.u_norm = ut.norm();
    r.step_norm = step_norm;
    r.drift = (ut - u0).norm();
    r.queries = oracle.queries();
    r.event = ev;
    if (vt) {
      r.v_norm = vt->norm();
      if (opt.exact_gap) {
        const Vector g = oracle.grad_exact(ut);
        r.estimator_gap = (*vt - g).norm();
        r.grad_norm = g.norm();
      }
    }
    out.steps.push_back(r);
  };

  auto finish = [&](ExitKind e, std::uint64_t t, Vector uf, double value) {
    out.exit = e;
    out.iterations = t;
    out.value_end = value;
    out.result = ManifoldPoint{oracle.point_at(uf), mf.id()};
    if (opt.keep_iterates && e == ExitKind::Boundary) out.iterates.push_back(uf);
    out.u_final = TangentVector{oracle.anchor(), std::move(uf)};
    out.queries = oracle.queries() - q_begin;
    return out;
  };

  for (std::uint64_t s = 0;; ++s) {
    const std::uint64_t base = s * p.m;
    if (s == 0 && opt.initial_anchor) {
      v = *opt.initial_anchor;
    } else {
      Rng anchor_rng = rng.split(Stream::Anchor, s);
      v = oracle.grad_largebatch(p.B, u, anchor_rng);
      ++out.anchors;
    }
    detail::guard_finite(v, base, "large-batch anchor");
    record(base, 0, s, u, 0.0, &v, StepEvent::Anchor, value_u);

    for (std::uint64_t k = 1; k <= p.m; ++k) {
      const std::uint64_t t = base + k;
      const Vector step = p.eta * v;
      Vector next = u - step;
      detail::guard_finite(next, t, "iterate");
      if (next.norm() >= p.D) {
        out.alpha = boundary_alpha(u, step, p.D);
        Vector uf = u - out.alpha * step;
        const double fv = oracle.value(uf);
        record(t, k, s, uf, (uf - u).norm(), nullptr, StepEvent::Boundary, fv);
        return finish(ExitKind::Boundary, t, std::move(uf), fv);
      }

      Rng batch_rng = rng.split(Stream::MiniBatch, t);
      const auto idx = oracle.draw_minibatch(p.b, batch_rng);
      const Vector g_next = oracle.grad_minibatch(idx, next);
      const Vector g_prev = oracle.grad_minibatch(idx, u);
      v = g_next - g_prev + v;
      detail::guard_finite(v, t, "recursive estimator");
      out.v_norms.push_back(v.norm());

      const double step_norm = step.norm();
      u = std::move(next);
      value_u = oracle.value(u);
      if (opt.keep_iterates) out.iterates.push_back(u);

      StepEvent ev = StepEvent::Step;
      std::optional<ExitKind> exit;
      if (t >= p.T_max) {
        exit = ExitKind::MaxIter;
        ev = StepEvent::MaxIter;
      } else if (!out.perturbed) {
        Rng break_rng = rng.split(Stream::Break, t);
        if (break_rng.uniform() < 1.0 / static_cast<double>(p.m - k + 1)) {
          exit = ExitKind::UniformBreak;
          ev = StepEvent::Break;
        }
      }
      record(t, k, s, u, step_norm, &v, ev, value_u);
      if (exit) return finish(*exit, t, u, value_u);
    }
  }
}

inline TssrgOutcome tssrg_run(PullbackOracle& oracle, const TangentVector& u0,
                              const TssrgParams& p, const Rng& rng,
                              const TssrgOptions& opt = {}) {
  oracle.manifold().check_base(oracle.anchor(), u0);
  return tssrg_run(oracle, u0.coords, p, rng, opt);
}

/// Two runs from u0 and u0p that share every batch and break draw.
inline std::pair<TssrgOutcome, TssrgOutcome> tssrg_run_coupled(
    PullbackOracle& oracle, const Vector& u0, const Vector& u0p, const TssrgParams& p,
    const Rng& rng, const TssrgOptions& opt = {}) {
  TssrgOutcome a = tssrg_run(oracle, u0, p, rng, opt);
  TssrgOutcome b = tssrg_run(oracle, u0p, p, rng, opt);
  return {std::move(a), std::move(b)};
}

inline std::pair<TssrgOutcome, TssrgOutcome> tssrg_run_coupled(
    PullbackOracle& oracle, const TangentVector& u0, const TangentVector& u0p,
    const TssrgParams& p, const Rng& rng, const TssrgOptions& opt = {}) {
  oracle.manifold().check_base(oracle.anchor(), u0);
  oracle.manifold().check_base(oracle.anchor(), u0p);
  return tssrg_run_coupled(oracle, u0.coords, u0p.coords, p, rng, opt);
}

}  // namespace prsrg
