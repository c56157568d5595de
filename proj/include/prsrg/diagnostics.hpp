#pragma once

// Empirical checks of the estimator and escape behaviour on recorded runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "prsrg/certify.hpp"
#include "prsrg/errors.hpp"
#include "prsrg/parallel.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/random.hpp"
#include "prsrg/solver.hpp"
#include "prsrg/tssrg.hpp"

namespace prsrg {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

struct VarianceReport {
  /// sup over steps of gap / normalizer.
  double sup_ratio = 0.0;
  /// Largest anchor gap |v_sm - grad F-hat(u_sm)| over epoch starts.
  double max_anchor_gap = 0.0;
  std::size_t steps_checked = 0;
  std::vector<double> anchor_gaps;
};

/// Ratio of the measured estimator gap to
///   (L / sqrt(b)) sqrt(sum_j |u_j - u_{j-1}|^2)  [+ sigma / sqrt(B) online]
/// with the sum running over the current epoch. Records need estimator gaps
/// (TssrgOptions::exact_gap).
inline VarianceReport check_variance_bound(const std::vector<StepRecord>& steps, double L_hat,
                                           std::uint64_t b, std::uint64_t B,
                                           std::optional<double> sigma_hat = std::nullopt) {
  if (!(L_hat > 0.0) || b == 0) throw ParameterError("variance check needs L_hat > 0 and b >= 1");
  VarianceReport rep;
  const double online = sigma_hat ? *sigma_hat / std::sqrt(static_cast<double>(std::max<std::uint64_t>(B, 1))) : 0.0;
  double path = 0.0;
  for (const auto& s : steps) {
    if (s.event == StepEvent::Boundary) continue;
    if (std::isnan(s.estimator_gap))
      throw SchemaError("step record at t=" + std::to_string(s.t) + " has no estimator gap");
    if (s.event == StepEvent::Anchor) {
      path = 0.0;
      rep.anchor_gaps.push_back(s.estimator_gap);
      rep.max_anchor_gap = std::max(rep.max_anchor_gap, s.estimator_gap);
      continue;
    }
    path += s.step_norm * s.step_norm;
    const double norm = L_hat / std::sqrt(static_cast<double>(b)) * std::sqrt(path) + online;
    ++rep.steps_checked;
    if (norm > 0.0) rep.sup_ratio = std::max(rep.sup_ratio, s.estimator_gap / norm);
  }
  return rep;
}

struct TrendReport {
  /// Largest factor between consecutive levels, max(a/b, b/a).
  double max_factor = 1.0;
  /// True when the statistic increases by more than the tolerance factor at
  /// some level.
  bool grows = false;
};

inline TrendReport variance_trend(const std::vector<double>& by_level, double tolerance = 1.5) {
  TrendReport t;
  for (std::size_t i = 1; i < by_level.size(); ++i) {
    const double a = by_level[i - 1];
    const double c = by_level[i];
    if (!(a > 0.0) || !(c > 0.0)) continue;
    t.max_factor = std::max(t.max_factor, std::max(a / c, c / a));
    if (c / a > tolerance) t.grows = true;
  }
  return t;
}

struct LocalizeReport {
  /// Largest c1 for which |u_t - u_0|^2 <= 4t/(c1 L) (F(u_0) - F(u_t)) + slack
  /// holds at every step; +inf for a run that never moves.
  double c1_fit = std::numeric_limits<double>::infinity();
  bool holds = true;
  std::size_t increasing_steps = 0;
  std::size_t violations = 0;
};

inline LocalizeReport check_improve_or_localize(const std::vector<StepRecord>& steps,
                                                double L_hat, double c1, double slack = 1e-12) {
  LocalizeReport rep;
  double f0 = std::numeric_limits<double>::quiet_NaN();
  double prev = f0;
  for (const auto& s : steps) {
    if (s.event == StepEvent::Anchor && s.t == 0) {
      f0 = prev = s.value;
      continue;
    }
    if (s.event == StepEvent::Anchor) continue;
    if (std::isnan(f0)) throw SchemaError("improve-or-localize needs the initial anchor record");
    if (s.value > prev + slack) ++rep.increasing_steps;
    prev = s.value;
    const double drift2 = s.drift * s.drift;
    const double decrease = f0 - s.value;
    const double t = static_cast<double>(s.t);
    if (drift2 <= slack) continue;
    const double fit = decrease > 0.0 ? 4.0 * t * decrease / (L_hat * drift2) : 0.0;
    rep.c1_fit = std::min(rep.c1_fit, fit);
    if (drift2 > 4.0 * t / (c1 * L_hat) * decrease + slack) ++rep.violations;
  }
  rep.holds = rep.violations == 0;
  return rep;
}

/// F-hat(u_t) <= F-hat(u_0) at the end of the run.
inline bool epoch_descends(const TssrgOutcome& out, double slack = 0.0) {
  return out.value_end <= out.value_start + slack;
}

/// exp of the least-squares slope of log(norms[t]) against t.
inline double fit_growth_rate(const std::vector<double>& norms) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t t = 0; t < norms.size(); ++t)
    if (norms[t] > 0.0 && std::isfinite(norms[t]))
      pts.emplace_back(static_cast<double>(t), std::log(norms[t]));
  if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (auto [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0, sxx = 0;
  for (auto [x, y] : pts) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  return std::exp(sxy / sxx);
}

/// Coupling offset nu r / sqrt(d).
inline double coupling_offset(double nu, double r, Eigen::Index d) {
  return nu * r / std::sqrt(static_cast<double>(d));
}

struct StuckOptions {
  double nu = 0.1;
  std::uint64_t trials = 50;
  double c2 = 1.0;
  double c3 = 1.0;
  /// Direction of most negative curvature; taken from certification when unset.
  std::optional<Vector> e1;
  CertifyOptions certify;
};

struct StuckTrial {
  bool deviated = false;
  bool decreased = false;
  /// First t with |u_t - u'_t| >= threshold.
  std::optional<std::uint64_t> separation_time;
  double max_deviation = 0.0;
  double decrease = 0.0;
  std::vector<double> separation;
};

struct StuckStats {
  std::uint64_t trials = 0;
  double r0 = 0.0;
  double threshold = 0.0;
  double escape_F = 0.0;
  double lambda_min = 0.0;
  Vector e1;
  std::uint64_t deviation_count = 0;
  std::uint64_t decrease_count = 0;
  double deviation_frequency = std::numeric_limits<double>::quiet_NaN();
  double decrease_frequency = std::numeric_limits<double>::quiet_NaN();
  std::vector<StuckTrial> per_trial;
};

/// Coupled runs from u_0 ~ Unif(B(r)) and u_0 - r0 e1 at a saddle anchor.
/// Reports how often one of the pair travels at least delta/(c2 rho) from its
/// start and how often one of them decreases F-hat by at least 2 F, with
/// F = delta^3 / (2 c3 rho^2).
inline StuckStats stuck_region_experiment(const PullbackOracle& oracle, const SolverParams& params,
                                          const StuckOptions& opt, const Rng& rng) {
  const Manifold& mf = oracle.manifold();
  if (!(params.rho_hat > 0.0)) throw ParameterError("stuck-region experiment needs rho_hat > 0");
  StuckStats st;
  Vector e1;
  if (opt.e1) {
    e1 = mf.project_tangent(oracle.anchor().coords, *opt.e1);
    if (e1.norm() == 0.0) throw ParameterError("e1 direction has no tangent component");
    e1.normalize();
    st.lambda_min = e1.dot(oracle.hvp(Vector::Zero(mf.ambient_dim()), e1));
  } else {
    const Certification c = certify(oracle, std::numeric_limits<double>::infinity(),
                                    params.delta, opt.certify);
    st.lambda_min = c.lambda_min_estimate;
    e1 = c.min_eigenvector;
  }
  if (!(st.lambda_min <= -params.delta))
    throw PreconditionError("anchor is not a saddle: lambda_min " + std::to_string(st.lambda_min) +
                            " > -delta");
  st.e1 = e1;
  st.trials = opt.trials;
  st.r0 = coupling_offset(opt.nu, params.r, mf.dim());
  st.threshold = params.delta / (opt.c2 * params.rho_hat);
  st.escape_F = escape_threshold(params.delta, params.rho_hat, opt.c3);
  st.per_trial.resize(opt.trials);

  TssrgParams tp = params.tssrg;
  parallel_for(
      opt.trials,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
          PullbackOracle local(oracle);
          const Rng trng = rng.split(Stream::Trial, k);
          Rng prng = trng.split(Stream::Perturb, 0);
          const Vector u0 = mf.sample_ball(oracle.anchor(), params.r, prng).coords;
          const Vector u0p = u0 - st.r0 * e1;
          TssrgOptions topt;
          topt.keep_iterates = true;
          auto [a, b] = tssrg_run_coupled(local, u0, u0p, tp, trng.split(Stream::Epoch, 0), topt);
          StuckTrial tr;
          for (const auto& u : a.iterates) tr.max_deviation = std::max(tr.max_deviation, (u - u0).norm());
          for (const auto& u : b.iterates) tr.max_deviation = std::max(tr.max_deviation, (u - u0p).norm());
          tr.deviated = tr.max_deviation >= st.threshold;
          const std::size_t len = std::min(a.iterates.size(), b.iterates.size());
          tr.separation.resize(len);
          for (std::size_t t = 0; t < len; ++t) {
            tr.separation[t] = (a.iterates[t] - b.iterates[t]).norm();
            if (!tr.separation_time && tr.separation[t] >= st.threshold) tr.separation_time = t;
          }
          tr.decrease = std::max(a.value_start - a.value_end, b.value_start - b.value_end);
          tr.decreased = tr.decrease >= 2.0 * st.escape_F;
          st.per_trial[k] = std::move(tr);
        }
      },
      1);
  for (const auto& tr : st.per_trial) {
    st.deviation_count += tr.deviated ? 1 : 0;
    st.decrease_count += tr.decreased ? 1 : 0;
  }
  if (opt.trials > 0) {
    st.deviation_frequency = static_cast<double>(st.deviation_count) / static_cast<double>(opt.trials);
    st.decrease_frequency = static_cast<double>(st.decrease_count) / static_cast<double>(opt.trials);
  }
  return st;
}

/// Closed-form first t with (1 + eta gamma)^t r0 >= threshold.
inline std::uint64_t predicted_separation_time(double eta, double gamma, double r0,
                                               double threshold) {
  if (r0 >= threshold) return 0;
  return static_cast<std::uint64_t>(
      std::ceil(std::log(threshold / r0) / std::log1p(eta * gamma)));
}

}  // namespace prsrg
