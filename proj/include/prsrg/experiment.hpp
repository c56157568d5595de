#pragma once

// Builds problems and solver parameters from an ExperimentConfig, runs the
// configured algorithm and serializes results.
//
// Randomness: everything below the problem instance flows from the
// experiment seed. Lipschitz estimation uses Rng(seed).split(Estimate, 0),
// random starting points Rng(seed).split(Sample, 0), the solver Rng(seed),
// and sweep cell k the seed Rng(seed).split(Cell, k).key().

#include <cmath>
#include <cstdint>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "prsrg/baselines.hpp"
#include "prsrg/certify.hpp"
#include "prsrg/config.hpp"
#include "prsrg/diagnostics.hpp"
#include "prsrg/errors.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/matrix_io.hpp"
#include "prsrg/parallel.hpp"
#include "prsrg/problems.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/solver.hpp"

namespace prsrg {

using Json = nlohmann::ordered_json;

struct ProblemInstance {
  std::shared_ptr<const FiniteSumObjective> objective;
  ManifoldPoint start;
  /// Global minimizer direction when known, for alignment reporting.
  std::optional<Vector> leading;
  /// Most negative curvature direction when known analytically.
  std::optional<Vector> negative_direction;
  Mode mode = Mode::FiniteSum;
};

inline Vector parse_spectrum(const std::string& text, Eigen::Index d) {
  if (text.rfind("gap:", 0) == 0) {
    double gap = 0.0;
    try {
      gap = std::stod(text.substr(4));
    } catch (const std::exception&) {
      throw ConfigError(0, "bad spectrum '" + text + "'");
    }
    return gap_spectrum(d, gap);
  }
  const auto parts = detail::split_list(text);
  Vector s(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i)
    s[static_cast<Eigen::Index>(i)] = detail::to_double(ConfigEntry{"spectrum", parts[i], 0});
  if (s.size() != d)
    throw ConfigError(0, "spectrum has " + std::to_string(s.size()) + " values, manifold needs " +
                             std::to_string(d));
  return s;
}

/// Reads a point from a CSV or PRSRGMAT file. Matrices are vectorized column
/// by column; a single row or column is taken as a vector.
inline Vector load_point(const std::string& path) {
  const Matrix m = load_matrix(path);
  if (m.rows() == 1) return m.row(0).transpose();
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline void save_point(const std::string& path, const Vector& x) {
  save_matrix(path, x.transpose(), false);
}

namespace detail {

inline Vector random_point(const Manifold& mf, Rng rng) {
  Vector g(mf.ambient_dim());
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = rng.normal();
  if (const auto* st = dynamic_cast<const Stiefel*>(&mf)) {
    Matrix a = Eigen::Map<const Matrix>(g.data(), st->rows(), st->cols());
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(st->rows(), st->cols());
    return Eigen::Map<const Vector>(q.data(), q.size());
  }
  if (dynamic_cast<const Sphere*>(&mf)) return g.normalized();
  return g;
}

inline std::optional<Eigen::Index> eigen_start(const std::string& start) {
  if (start == "e2") return 1;
  if (start.size() >= 2 && start[0] == 'v') {
    long k = 0;
    const auto [end, ec] = std::from_chars(start.data() + 1, start.data() + start.size(), k);
    if (ec == std::errc() && end == start.data() + start.size() && k >= 1)
      return static_cast<Eigen::Index>(k - 1);
  }
  return std::nullopt;
}

}  // namespace detail

inline ProblemInstance build_problem(const ExperimentConfig& cfg,
                                     std::optional<std::uint64_t> n_override = std::nullopt) {
  ManifoldOptions mo;
  if (cfg.solver.D) mo.ball_radius = *cfg.solver.D;
  if (cfg.solver.c0) mo.c0 = *cfg.solver.c0;
  const auto mf = make_manifold(cfg.manifold, mo);
  const auto& p = cfg.problem;
  const std::uint64_t n = n_override.value_or(p.n);
  ProblemInstance inst;
  inst.mode = cfg.solver.mode == "online" ? Mode::Online : Mode::FiniteSum;
  std::function<Vector(Eigen::Index)> eigvec;

  if (p.kind == "rayleigh" || p.kind == "streaming_rayleigh") {
    if (!dynamic_cast<const Sphere*>(mf.get()))
      throw ConfigError(0, p.kind + " needs a sphere manifold");
    const Eigen::Index d = mf->ambient_dim();
    const Vector spectrum = parse_spectrum(p.spectrum, d);
    if (p.kind == "rayleigh") {
      RayleighSpec spec{d, n, spectrum, p.noise_scale, p.seed, p.rotation_seed,
                        mf->ball_radius(), mf->c0()};
      auto obj = std::make_shared<RayleighObjective>(spec);
      eigvec = [obj](Eigen::Index k) { return obj->eigenvector(k); };
      inst.objective = obj;
    } else {
      auto obj = std::make_shared<StreamingRayleighObjective>(d, spectrum, p.seed, p.rotation_seed,
                                                              mf->ball_radius(), mf->c0());
      eigvec = [obj](Eigen::Index k) { return obj->eigenvector(k); };
      inst.objective = obj;
      inst.mode = Mode::Online;
    }
    inst.leading = eigvec(0);
  } else if (p.kind == "quadratic") {
    if (!dynamic_cast<const Euclidean*>(mf.get()))
      throw ConfigError(0, "quadratic needs a euclidean manifold");
    const Eigen::Index d = mf->ambient_dim();
    auto obj = make_quadratic_saddle(d, p.gamma, p.L_top, n, p.seed, p.noise_scale,
                                     mf->ball_radius());
    eigvec = [obj](Eigen::Index k) { return obj->eigenvector(k); };
    inst.negative_direction = obj->eigenvector(0);
    inst.objective = obj;
  } else {
    Matrix data;
    if (!p.data.empty()) {
      data = load_matrix(p.data);
    } else {
      const Eigen::Index dim = dynamic_cast<const Stiefel*>(mf.get())
                                   ? dynamic_cast<const Stiefel*>(mf.get())->rows()
                                   : mf->ambient_dim();
      data = gaussian_data(n, parse_spectrum(p.spectrum, dim), p.seed, p.rotation_seed);
    }
    auto obj = std::make_shared<DataPcaObjective>(mf, std::move(data));
    if (dynamic_cast<const Sphere*>(mf.get())) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(obj->covariance());
      const Matrix vecs = es.eigenvectors().rowwise().reverse();
      eigvec = [vecs](Eigen::Index k) { return Vector(vecs.col(k)); };
      inst.leading = eigvec(0);
    }
    inst.objective = obj;
  }

  const Manifold& m = inst.objective->manifold();
  Vector x0;
  if (p.start == "random") {
    x0 = detail::random_point(m, Rng(cfg.seed).split(Stream::Sample, 0));
  } else if (p.start == "origin") {
    x0 = Vector::Zero(m.ambient_dim());
  } else if (p.start.rfind("file:", 0) == 0) {
    x0 = load_point(p.start.substr(5));
    if (x0.size() != m.ambient_dim())
      throw SchemaError("start point has dimension " + std::to_string(x0.size()) + ", manifold needs " +
                        std::to_string(m.ambient_dim()));
  } else if (auto k = detail::eigen_start(p.start); k && eigvec) {
    if (*k >= m.ambient_dim()) throw ConfigError(0, "start '" + p.start + "' exceeds the dimension");
    x0 = eigvec(*k);
    if (dynamic_cast<const Euclidean*>(&m)) x0.setZero();
  } else {
    throw ConfigError(0, "unsupported start '" + p.start + "' for problem kind " + p.kind);
  }
  inst.start = m.point(std::move(x0));
  return inst;
}

struct Setup {
  ProblemInstance problem;
  LipschitzEstimate lipschitz;
  SolverParams params;
};

inline Setup prepare(const ExperimentConfig& cfg,
                     std::optional<std::uint64_t> n_override = std::nullopt) {
  Setup s;
  s.problem = build_problem(cfg, n_override);
  const auto& obj = s.problem.objective;
  const Manifold& mf = obj->manifold();
  LipschitzOptions lo;
  lo.samples = cfg.estimate.samples;
  lo.safety = cfg.estimate.safety;
  lo.ell = cfg.solver.ell;
  lo.rho = cfg.solver.rho;
  const bool need_estimate = !(cfg.solver.ell && cfg.solver.rho);
  if (need_estimate) {
    const PullbackOracle probe(obj, s.problem.start);
    s.lipschitz = estimate_lipschitz(probe, Rng(cfg.seed).split(Stream::Estimate, 0), lo);
  } else {
    s.lipschitz.ell = *cfg.solver.ell;
    s.lipschitz.rho = *cfg.solver.rho;
    s.lipschitz.L = s.lipschitz.ell + s.lipschitz.rho * mf.ball_radius();
  }
  if (cfg.solver.L) s.lipschitz.L = *cfg.solver.L;
  if (!(s.lipschitz.rho > 0.0))
    throw ParameterError("estimated Hessian Lipschitz constant is 0 (quadratic objective?); "
                         "set [solver] rho");

  double n_or_sigma = 0.0;
  if (s.problem.mode == Mode::FiniteSum) {
    const auto n = obj->size();
    if (!n) throw ConfigError(0, "finite_sum mode needs a finite-sum problem");
    n_or_sigma = static_cast<double>(*n);
  } else {
    const auto sigma = cfg.solver.sigma ? cfg.solver.sigma : obj->sigma_hint();
    if (!sigma) throw ConfigError(0, "online mode needs [solver] sigma for this problem");
    n_or_sigma = *sigma;
  }
  s.params = derive_params(s.problem.mode, n_or_sigma, cfg.solver.epsilon, cfg.solver.delta,
                           s.lipschitz.L, s.lipschitz.rho, cfg.constants.solver(), mf.ball_radius(),
                           s.lipschitz.ell);
  auto& tp = s.params.tssrg;
  if (cfg.solver.eta) tp.eta = *cfg.solver.eta;
  if (cfg.solver.m) tp.m = *cfg.solver.m;
  if (cfg.solver.b) tp.b = *cfg.solver.b;
  if (cfg.solver.B) tp.B = *cfg.solver.B;
  if (cfg.solver.T_max) tp.T_max = *cfg.solver.T_max;
  if (cfg.solver.r) s.params.r = *cfg.solver.r;
  s.params.budget = cfg.budget;
  s.params.validate();
  return s;
}

inline SolverOptions solver_options(const ExperimentConfig& cfg) {
  SolverOptions o;
  o.trace_level = cfg.trace == "step" ? TraceLevel::Step : TraceLevel::Epoch;
  o.exact_gaps = cfg.exact_gaps;
  return o;
}

inline SolverReport run_algorithm(const ExperimentConfig& cfg, const Setup& s,
                                  const std::string& algorithm) {
  const Rng rng(cfg.seed);
  const SolverOptions opt = solver_options(cfg);
  if (algorithm == "prsrg") return prsrg_run(s.problem.objective, s.problem.start, s.params, rng, opt);
  BaselineConfig bc;
  if (algorithm == "prgd") {
    bc.kind = BaselineKind::Prgd;
  } else if (algorithm == "rsgd") {
    bc.kind = BaselineKind::Rsgd;
  } else if (algorithm == "rsrg_unperturbed") {
    bc.kind = BaselineKind::RsrgUnperturbed;
  } else {
    throw ConfigError(0, "unknown algorithm '" + algorithm + "'");
  }
  bc.eta = cfg.baseline.eta > 0.0 ? cfg.baseline.eta : s.params.tssrg.eta;
  bc.r = cfg.baseline.r > 0.0 ? cfg.baseline.r : s.params.r;
  bc.escape_steps = cfg.baseline.escape_steps > 0 ? cfg.baseline.escape_steps : s.params.tssrg.T_max;
  bc.batch = cfg.baseline.batch > 0 ? cfg.baseline.batch : s.params.tssrg.b;
  if (s.problem.mode == Mode::Online) bc.check_batch = s.params.tssrg.B;
  return baseline_run(s.problem.objective, s.problem.start, bc, s.params.epsilon, s.params.delta,
                      s.params.budget, rng, s.params, opt);
}

// JSON serialization.

inline Json to_json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(to_json_number(v[i]));
  return a;
}

inline Json certification_json(const Certification& c) {
  Json j;
  j["passed"] = c.passed;
  j["grad_norm"] = to_json_number(c.grad_norm);
  j["lambda_min_estimate"] = to_json_number(c.lambda_min_estimate);
  j["lanczos_iters"] = c.lanczos_iters;
  j["lanczos_tolerance"] = to_json_number(c.lanczos_tolerance);
  j["lanczos_failed"] = c.lanczos_failed;
  j["hessian_skipped"] = c.hessian_skipped;
  j["epsilon"] = to_json_number(c.epsilon);
  j["delta"] = to_json_number(c.delta);
  return j;
}

inline Json params_json(const SolverParams& p, const LipschitzEstimate& lip) {
  Json j;
  j["mode"] = std::string(to_string(p.mode));
  j["eta"] = to_json_number(p.tssrg.eta);
  j["m"] = p.tssrg.m;
  j["b"] = p.tssrg.b;
  j["B"] = p.tssrg.B;
  j["T_max"] = p.tssrg.T_max;
  j["D"] = to_json_number(p.tssrg.D);
  j["r"] = to_json_number(p.r);
  j["epsilon"] = to_json_number(p.epsilon);
  j["delta"] = to_json_number(p.delta);
  j["ell_hat"] = to_json_number(lip.ell);
  j["rho_hat"] = to_json_number(lip.rho);
  j["L_hat"] = to_json_number(lip.L);
  return j;
}

inline Json report_json(const ExperimentConfig& cfg, const Setup& s, const SolverReport& r) {
  Json j;
  j["algorithm"] = r.algorithm;
  j["seed"] = cfg.seed;
  j["manifold"] = cfg.manifold;
  j["problem"] = cfg.problem.kind;
  if (const auto n = s.problem.objective->size()) j["n"] = *n;
  j["params"] = params_json(s.params, s.lipschitz);
  j["budget"] = r.budget == std::numeric_limits<std::uint64_t>::max() ? Json(nullptr) : Json(r.budget);
  j["queries_used"] = r.queries_used;
  j["queries_to_certification"] =
      r.queries_to_certification ? Json(*r.queries_to_certification) : Json(nullptr);
  j["stop"] = std::string(to_string(r.stop));
  j["outer_iterations"] = r.outer_iterations;
  j["checks"] = r.checks;
  j["certified"] = r.certified ? certification_json(*r.certified) : Json(nullptr);
  j["best_value"] = to_json_number(r.best_value);
  j["final_value"] = to_json_number(r.final_value);
  if (s.problem.leading) {
    j["best_alignment"] = to_json_number(std::abs(r.best_point.coords.dot(*s.problem.leading)));
    j["final_alignment"] = to_json_number(std::abs(r.final_point.coords.dot(*s.problem.leading)));
  }
  Json ep;
  ep["type1_descent"] = r.epochs.type1_descent;
  ep["type2_descent"] = r.epochs.type2_descent;
  ep["useful"] = r.epochs.useful;
  ep["wasted"] = r.epochs.wasted;
  ep["escape"] = r.epochs.escape;
  ep["baseline"] = r.epochs.baseline;
  j["epochs"] = ep;
  Json esc = Json::array();
  for (const auto& e : r.escapes) {
    Json x;
    x["outer_t"] = e.outer_t;
    x["value_start"] = to_json_number(e.value_start);
    x["value_end"] = to_json_number(e.value_end);
    x["decrease"] = to_json_number(e.decrease());
    x["lambda_min"] = to_json_number(e.lambda_min);
    x["certified_saddle"] = e.certified_saddle;
    x["exit"] = std::string(to_string(e.exit));
    x["iterations"] = e.iterations;
    esc.push_back(x);
  }
  j["escapes"] = esc;
  j["warnings"] = r.warnings;
  j["best_point"] = vector_json(r.best_point.coords);
  return j;
}

inline Json stuck_json(const StuckStats& st, const SolverParams& p) {
  Json j;
  j["trials"] = st.trials;
  j["r0"] = to_json_number(st.r0);
  j["threshold"] = to_json_number(st.threshold);
  j["escape_F"] = to_json_number(st.escape_F);
  j["lambda_min"] = to_json_number(st.lambda_min);
  j["deviation_count"] = st.deviation_count;
  j["deviation_frequency"] = to_json_number(st.deviation_frequency);
  j["decrease_count"] = st.decrease_count;
  j["decrease_frequency"] = to_json_number(st.decrease_frequency);
  j["T_max"] = p.tssrg.T_max;
  j["predicted_separation_time"] =
      st.lambda_min < 0.0 && st.r0 > 0.0
          ? Json(predicted_separation_time(p.tssrg.eta, -st.lambda_min, st.r0, st.threshold))
          : Json(nullptr);
  Json times = Json::array();
  for (const auto& t : st.per_trial)
    times.push_back(t.separation_time ? Json(*t.separation_time) : Json(nullptr));
  j["separation_times"] = times;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

struct SweepCell {
  std::uint64_t n = 0;
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  SolverReport report;
  std::string report_path;
};

inline std::string summary_header() {
  return "algorithm,n,seed,queries_used,queries_to_certification,certified,best_value,stop";
}

inline std::string summary_row(const std::string& algorithm, std::optional<std::uint64_t> n,
                               std::uint64_t seed, const SolverReport& r) {
  std::string s = algorithm + ',' + (n ? std::to_string(*n) : std::string()) + ',' +
                  std::to_string(seed) + ',' + std::to_string(r.queries_used) + ',' +
                  (r.queries_to_certification ? std::to_string(*r.queries_to_certification) : "") +
                  ',' + (r.certified ? "true" : "false") + ',' + format_double(r.best_value) + ',' +
                  std::string(to_string(r.stop));
  return s;
}

/// Runs every (n, seed) cell of the sweep, writing a trace and report per
/// cell and summary.csv in cell order.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  std::vector<SweepCell> cells;
  for (const auto n : cfg.sweep.n)
    for (std::uint64_t k = 0; k < cfg.sweep.seeds; ++k)
      cells.push_back(SweepCell{n, k, Rng(cfg.seed).split(Stream::Cell, k).key(), {}, {}});
  std::filesystem::create_directories(out);
  parallel_for(
      cells.size(),
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          auto& c = cells[i];
          ExperimentConfig cc = cfg;
          cc.seed = c.seed;
          const Setup s = prepare(cc, c.n);
          c.report = run_algorithm(cc, s, cc.algorithm);
          const std::string stem = "n" + std::to_string(c.n) + "_seed" + std::to_string(c.index);
          c.report_path = (out / ("report_" + stem + ".json")).string();
          write_text(c.report_path, report_json(cc, s, c.report).dump(2) + "\n");
          c.report.trace.save((out / ("trace_" + stem + ".csv")).string());
        }
      },
      1);
  std::string summary = summary_header() + "\n";
  for (const auto& c : cells) summary += summary_row(cfg.algorithm, c.n, c.seed, c.report) + "\n";
  write_text(out / "summary.csv", summary);
  return cells;
}

struct CoupleResult {
  StuckStats stats;
  Json json;
};

/// Stuck-region experiment at the configured start point.
inline CoupleResult run_couple(const ExperimentConfig& cfg) {
  const Setup s = prepare(cfg);
  const PullbackOracle oracle(s.problem.objective, s.problem.start);
  StuckOptions so;
  so.nu = cfg.couple.nu;
  so.trials = cfg.couple.trials;
  so.c2 = cfg.constants.c2;
  so.c3 = cfg.constants.c3;
  so.e1 = s.problem.negative_direction;
  so.certify.ell = s.lipschitz.ell;
  CoupleResult r;
  r.stats = stuck_region_experiment(oracle, s.params, so, Rng(cfg.seed));
  r.json = stuck_json(r.stats, s.params);
  return r;
}

/// Certifies a point given in a matrix file against the configured problem.
inline Json run_certify(const ExperimentConfig& cfg, const std::string& point_file) {
  const Setup s = prepare(cfg);
  const Manifold& mf = s.problem.objective->manifold();
  Vector x = load_point(point_file);
  if (x.size() != mf.ambient_dim())
    throw SchemaError("point has dimension " + std::to_string(x.size()) + ", manifold needs " +
                      std::to_string(mf.ambient_dim()));
  if (!mf.contains(x)) throw ContractViolation("point is not on " + mf.id());
  CertifyOptions co;
  co.ell = s.lipschitz.ell;
  const Certification c =
      certify(PullbackOracle(s.problem.objective, mf.point(std::move(x))), cfg.solver.epsilon,
              cfg.solver.delta, co);
  return certification_json(c);
}

}  // namespace prsrg
