#pragma once

// Outer loop: small-gradient check, then either a plain epoch from the origin
// of the tangent space or a perturbed escape episode of up to T_max steps.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "prsrg/certify.hpp"
#include "prsrg/errors.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/objective.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/random.hpp"
#include "prsrg/trace.hpp"
#include "prsrg/tssrg.hpp"

namespace prsrg {

enum class Mode { FiniteSum, Online };

inline std::string_view to_string(Mode m) {
  return m == Mode::FiniteSum ? "finite_sum" : "online";
}

struct SolverConstants {
  double c_eta = 0.1;
  double c_T = 20.0;
  double c_r = 1.0;
  double c_m = 1.0;
  double c_B = 16.0;

  void validate() const {
    for (double c : {c_eta, c_T, c_r, c_m, c_B})
      if (!(c > 0.0) || !std::isfinite(c)) throw ParameterError("solver constants must be positive");
  }
};

struct SolverParams {
  TssrgParams tssrg;
  double r = 0.0;
  double epsilon = 1e-3;
  double delta = 0.1;
  std::uint64_t budget = std::numeric_limits<std::uint64_t>::max();
  Mode mode = Mode::FiniteSum;
  double L_hat = 0.0;
  double rho_hat = 0.0;
  std::optional<double> ell_hat;
  std::vector<std::string> warnings;

  void validate() const {
    tssrg.validate();
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    if (!(delta > 0.0)) throw ParameterError("delta must be positive");
    if (!(r >= 0.0)) throw ParameterError("r must be >= 0");
    if (r > tssrg.D) throw ParameterError("r must not exceed D");
  }
};

inline std::uint64_t ceil_sqrt(std::uint64_t n) {
  auto s = static_cast<std::uint64_t>(std::sqrt(static_cast<double>(n)));
  while (s * s > n) --s;
  while (s * s < n) ++s;
  return s;
}

inline std::uint64_t ceil_positive(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw ParameterError("derived size is not a positive finite number");
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(x)));
}

/// Default parameter schedule.
///   finite-sum: m = b = ceil(sqrt n), B = n
///   online:     m = b = ceil(c_m sigma / eps), B = ceil(c_B sigma^2 / eps^2)
///   both:       eta = c_eta / L, T = ceil(c_T / delta),
///               r = c_r min(delta^3 / (rho^2 eps), sqrt(delta^3 / (rho^2 L))), capped at D
inline SolverParams derive_params(Mode mode, double n_or_sigma, double epsilon, double delta,
                                  double L_hat, double rho_hat,
                                  const SolverConstants& c = {}, double D = 0.5,
                                  std::optional<double> ell_hat = std::nullopt) {
  c.validate();
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
  if (!(L_hat > 0.0)) throw ParameterError("L_hat must be positive");
  if (!(rho_hat > 0.0)) throw ParameterError("rho_hat must be positive");
  if (!(n_or_sigma > 0.0)) throw ParameterError("n (or sigma) must be positive");
  if (!(D > 0.0)) throw ParameterError("D must be positive");

  SolverParams p;
  p.mode = mode;
  p.epsilon = epsilon;
  p.delta = delta;
  p.L_hat = L_hat;
  p.rho_hat = rho_hat;
  p.ell_hat = ell_hat;
  if (mode == Mode::FiniteSum) {
    const auto n = static_cast<std::uint64_t>(std::llround(n_or_sigma));
    p.tssrg.m = p.tssrg.b = ceil_sqrt(n);
    p.tssrg.B = n;
  } else {
    const double sigma = n_or_sigma;
    p.tssrg.m = p.tssrg.b = ceil_positive(c.c_m * sigma / epsilon);
    p.tssrg.B = ceil_positive(c.c_B * sigma * sigma / (epsilon * epsilon));
  }
  p.tssrg.eta = c.c_eta / L_hat;
  p.tssrg.T_max = ceil_positive(c.c_T / delta);
  p.tssrg.D = D;
  const double d3 = delta * delta * delta;
  const double r2 = rho_hat * rho_hat;
  p.r = c.c_r * std::min(d3 / (r2 * epsilon), std::sqrt(d3 / (r2 * L_hat)));
  if (p.r > D) {
    p.warnings.push_back("perturbation radius capped at D");
    p.r = D;
  }
  if (ell_hat && delta > *ell_hat)
    p.warnings.push_back("delta exceeds ell_hat; every small-gradient point is second-order stationary");
  for (auto& w : p.tssrg.warnings()) p.warnings.push_back(std::move(w));
  return p;
}

/// Escape decrease threshold delta^3 / (2 c3 rho^2).
inline double escape_threshold(double delta, double rho_hat, double c3 = 1.0) {
  if (!(c3 > 0.0) || !(rho_hat > 0.0) || !(delta > 0.0))
    throw ParameterError("escape threshold needs positive delta, rho and c3");
  return delta * delta * delta / (2.0 * c3 * rho_hat * rho_hat);
}

struct SmallGradCheck {
  bool small = false;
  TangentVector grad;
};

/// Batch gradient at the origin of the anchor's tangent space (counted) and
/// whether its norm is at most epsilon.
inline SmallGradCheck small_grad_check(PullbackOracle& oracle, std::uint64_t batch,
                                       double epsilon, Rng& rng) {
  const Vector zero = Vector::Zero(oracle.manifold().ambient_dim());
  Vector g = oracle.grad_largebatch(batch, zero, rng);
  const bool small = g.norm() <= epsilon;
  return {small, TangentVector{oracle.anchor(), std::move(g)}};
}

struct EpochCounts {
  std::uint64_t type1_descent = 0;
  std::uint64_t type2_descent = 0;
  std::uint64_t useful = 0;
  std::uint64_t wasted = 0;
  std::uint64_t escape = 0;
  std::uint64_t baseline = 0;

  void add(EpochType e) {
    switch (e) {
      case EpochType::Type1Descent: ++type1_descent; break;
      case EpochType::Type2Descent: ++type2_descent; break;
      case EpochType::Useful: ++useful; break;
      case EpochType::Wasted: ++wasted; break;
      case EpochType::Escape: ++escape; break;
      case EpochType::Baseline: ++baseline; break;
    }
  }
  std::uint64_t total() const {
    return type1_descent + type2_descent + useful + wasted + escape + baseline;
  }
};

struct EscapeEpisode {
  std::uint64_t outer_t = 0;
  double value_start = 0.0;
  double value_end = 0.0;
  double lambda_min = 0.0;
  bool certified_saddle = false;
  ExitKind exit = ExitKind::MaxIter;
  std::uint64_t iterations = 0;
  double decrease() const { return value_start - value_end; }
};

enum class StopReason { Certified, Budget, MaxOuter };

inline std::string_view to_string(StopReason s) {
  switch (s) {
    case StopReason::Certified: return "certified";
    case StopReason::Budget: return "budget";
    case StopReason::MaxOuter: return "max_outer";
  }
  return "?";
}

struct SolverReport {
  std::string algorithm = "prsrg";
  ManifoldPoint best_point;
  double best_value = 0.0;
  ManifoldPoint final_point;
  double final_value = 0.0;
  std::optional<Certification> certified;
  std::optional<ManifoldPoint> certified_point;
  std::uint64_t queries_used = 0;
  std::uint64_t budget = 0;
  /// Queries spent when the run first produced a passing certificate.
  std::optional<std::uint64_t> queries_to_certification;
  std::uint64_t outer_iterations = 0;
  std::uint64_t checks = 0;
  EpochCounts epochs;
  std::vector<EscapeEpisode> escapes;
  StopReason stop = StopReason::Budget;
  std::vector<std::string> warnings;
  RunTrace trace;
};

enum class TraceLevel { Epoch, Step };

struct SolverOptions {
  TraceLevel trace_level = TraceLevel::Epoch;
  /// Measure estimator gaps against the exact gradient in step-level traces.
  bool exact_gaps = false;
  CertifyOptions certify;
  std::uint64_t max_outer = std::numeric_limits<std::uint64_t>::max();
  /// Keep running after a passing certificate instead of stopping.
  bool continue_after_certification = false;
};

namespace detail {

/// Collects trace rows of the epoch in progress until its type is known.
class EpochBuffer {
 public:
  explicit EpochBuffer(RunTrace& trace) : trace_(trace) {}

  void add(TraceRow row) { rows_.push_back(std::move(row)); }
  bool pending() const { return pending_; }
  void open() { pending_ = true; }

  void close(EpochType type, EpochCounts& counts) {
    for (auto& r : rows_) {
      r.epoch_type = type;
      trace_.push(std::move(r));
    }
    rows_.clear();
    if (pending_) counts.add(type);
    pending_ = false;
  }

 private:
  RunTrace& trace_;
  std::vector<TraceRow> rows_;
  bool pending_ = false;
};

inline void append_steps(EpochBuffer& buf, const TssrgOutcome& out, std::uint64_t outer_t,
                         std::uint64_t query_offset, std::uint64_t oracle_base,
                         TraceLevel level) {
  for (const auto& s : out.steps) {
    const bool terminal = s.event == StepEvent::Boundary || s.event == StepEvent::Break ||
                          s.event == StepEvent::MaxIter;
    if (level == TraceLevel::Epoch && !terminal) continue;
    TraceRow row;
    row.outer_t = outer_t;
    row.inner_k = s.t;
    row.F_value = s.value;
    row.grad_norm_or_batch = s.v_norm;
    row.estimator_gap = s.estimator_gap;
    row.u_norm = s.u_norm;
    row.queries_cum = query_offset + (s.queries - oracle_base);
    row.event = std::string(to_string(s.event));
    buf.add(std::move(row));
  }
}

inline std::uint64_t effective_batch(std::uint64_t b, std::optional<std::uint64_t> n) {
  return n ? std::min(b, *n) : b;
}

}  // namespace detail

/// Worst-case cost of a TSSRG run with T steps, given whether the first
/// anchor is supplied by the caller.
inline std::uint64_t tssrg_worst_cost(const TssrgParams& p, std::uint64_t T,
                                      std::optional<std::uint64_t> n, bool first_anchor_free) {
  const std::uint64_t epochs = (T + p.m - 1) / p.m;
  const std::uint64_t anchors = first_anchor_free ? epochs - 1 : epochs;
  return anchors * p.B + T * 2 * detail::effective_batch(p.b, n);
}

inline SolverReport prsrg_run(const std::shared_ptr<const FiniteSumObjective>& objective,
                              const ManifoldPoint& x0, const SolverParams& params,
                              const Rng& rng, const SolverOptions& opt = {}) {
  params.validate();
  const Manifold& mf = objective->manifold();
  mf.check_point(x0);
  const auto n = objective->size();
  if (params.mode == Mode::FiniteSum && !n)
    throw ParameterError("finite-sum mode needs an objective with a component count");
  if (n && params.tssrg.B > *n) throw BatchTooLarge(params.tssrg.B, *n);

  SolverReport rep;
  rep.budget = params.budget;
  rep.warnings = params.warnings;
  rep.best_point = x0;
  rep.best_value = objective->value(x0.coords);
  detail::EpochBuffer buf(rep.trace);

  CertifyOptions copt = opt.certify;
  if (!copt.ell) copt.ell = params.ell_hat;

  ManifoldPoint x = x0;
  double fx = rep.best_value;
  std::optional<std::pair<Vector, Certification>> cert_cache;
  std::uint64_t used = 0;
  const TssrgParams& tp = params.tssrg;
  const std::uint64_t check_cost = tp.B;

  auto observe = [&](const ManifoldPoint& p, double f) {
    if (f < rep.best_value) {
      rep.best_value = f;
      rep.best_point = p;
    }
  };

  auto stop_budget = [&] { rep.stop = StopReason::Budget; };

  std::uint64_t o = 0;
  for (;; ++o) {
    if (o >= opt.max_outer) {
      rep.stop = StopReason::MaxOuter;
      break;
    }
    if (used + check_cost > params.budget) {
      stop_budget();
      break;
    }
    const Rng orng = rng.split(Stream::Outer, o);
    PullbackOracle oracle(objective, x);
    Rng check_rng = orng.split(Stream::Check, 0);
    const SmallGradCheck chk = small_grad_check(oracle, tp.B, params.epsilon, check_rng);
    used += oracle.queries();
    ++rep.checks;
    const double gnorm = chk.grad.norm();
    if (buf.pending()) buf.close(chk.small ? EpochType::Useful : EpochType::Wasted, rep.epochs);

    TraceRow check_row;
    check_row.outer_t = o;
    check_row.F_value = fx;
    check_row.grad_norm_or_batch = gnorm;
    check_row.queries_cum = used;
    check_row.event = "check";

    if (chk.small) {
      Certification cert;
      if (cert_cache && cert_cache->first == x.coords) {
        cert = cert_cache->second;
      } else {
        cert = certify(PullbackOracle(objective, x), params.epsilon, params.delta, copt);
        cert_cache.emplace(x.coords, cert);
      }
      check_row.event = cert.passed ? "certify_pass" : "certify_fail";
      if (cert.passed) {
        if (!rep.certified) {
          rep.certified = cert;
          rep.certified_point = x;
          rep.queries_to_certification = used;
        }
        check_row.epoch_type = EpochType::Useful;
        rep.trace.push(check_row);
        if (!opt.continue_after_certification) {
          rep.stop = StopReason::Certified;
          ++o;
          break;
        }
      }
      const std::uint64_t cost = tssrg_worst_cost(tp, tp.T_max, n, false);
      if (used + cost > params.budget) {
        if (!cert.passed) {
          check_row.epoch_type = EpochType::Escape;
          rep.trace.push(check_row);
        }
        stop_budget();
        ++o;
        break;
      }
      if (!cert.passed) buf.add(check_row);
      Rng perturb_rng = orng.split(Stream::Perturb, 0);
      const Vector u0 = mf.sample_ball(x, params.r, perturb_rng).coords;
      TssrgParams ep = tp;
      TssrgOptions topt;
      topt.record = true;
      topt.exact_gap = opt.exact_gaps && opt.trace_level == TraceLevel::Step;
      const std::uint64_t base = oracle.queries();
      TssrgOutcome out = tssrg_run(oracle, u0, ep, orng.split(Stream::Epoch, 0), topt);
      detail::append_steps(buf, out, o, used, base, opt.trace_level);
      used += out.queries;
      EscapeEpisode epi;
      epi.outer_t = o;
      epi.value_start = fx;
      epi.value_end = objective->value(out.result.coords);
      epi.lambda_min = cert.lambda_min_estimate;
      epi.certified_saddle = !cert.passed && !cert.hessian_skipped;
      epi.exit = out.exit;
      epi.iterations = out.iterations;
      rep.escapes.push_back(epi);
      buf.open();
      buf.close(EpochType::Escape, rep.epochs);
      x = out.result;
      fx = epi.value_end;
    } else {
      const std::uint64_t cost = tssrg_worst_cost(tp, tp.m, n, true);
      if (used + cost > params.budget) {
        check_row.epoch_type = EpochType::Wasted;
        rep.trace.push(check_row);
        stop_budget();
        ++o;
        break;
      }
      buf.add(check_row);
      TssrgParams ep = tp;
      ep.T_max = tp.m;
      TssrgOptions topt;
      topt.record = true;
      topt.exact_gap = opt.exact_gaps && opt.trace_level == TraceLevel::Step;
      topt.initial_anchor = chk.grad.coords;
      const std::uint64_t base = oracle.queries();
      const Vector zero = Vector::Zero(mf.ambient_dim());
      TssrgOutcome out = tssrg_run(oracle, zero, ep, orng.split(Stream::Epoch, 0), topt);
      detail::append_steps(buf, out, o, used, base, opt.trace_level);
      used += out.queries;
      x = out.result;
      fx = objective->value(x.coords);
      buf.open();
      if (out.exit == ExitKind::Boundary) {
        buf.close(EpochType::Type1Descent, rep.epochs);
      } else {
        std::size_t large = 0;
        for (double vn : out.v_norms)
          if (vn > params.epsilon / 2.0) ++large;
        if (2 * large >= out.v_norms.size() && !out.v_norms.empty())
          buf.close(EpochType::Type2Descent, rep.epochs);
      }
    }
    observe(x, fx);
  }
  if (buf.pending()) {
    PullbackOracle probe(objective, x);
    const double g = probe.grad_exact(Vector::Zero(mf.ambient_dim())).norm();
    buf.close(g <= params.epsilon ? EpochType::Useful : EpochType::Wasted, rep.epochs);
  }
  rep.outer_iterations = o;
  rep.queries_used = used;
  rep.final_point = x;
  rep.final_value = fx;
  observe(x, fx);
  return rep;
}

}  // namespace prsrg
