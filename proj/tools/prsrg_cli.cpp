#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "prsrg.hpp"

namespace fs = std::filesystem;
using namespace prsrg;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNotSaddle = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::uint64_t> budget;
  std::optional<std::string> algo;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "experiment config file")->required();
    cmd->add_option("--seed", seed, "master seed (overrides [experiment] seed)");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--budget", budget, "stochastic gradient query budget");
    cmd->add_option("--algo", algo, "prsrg | prgd | rsgd | rsrg_unperturbed");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = ExperimentConfig::load(config);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (budget) cfg.budget = *budget;
    if (algo) {
      if (*algo != "prsrg" && *algo != "prgd" && *algo != "rsgd" && *algo != "rsrg_unperturbed")
        throw ConfigError(0, "unknown algorithm '" + *algo + "'");
      cfg.algorithm = *algo;
    }
    return cfg;
  }
};

void write_run(const ExperimentConfig& cfg, const Setup& s, const SolverReport& r, const fs::path& dir,
               const std::string& suffix = {}) {
  fs::create_directories(dir);
  r.trace.save((dir / ("trace" + suffix + ".csv")).string());
  write_text(dir / ("report" + suffix + ".json"), report_json(cfg, s, r).dump(2) + "\n");
}

int cmd_run(const CommonFlags& f) {
  const ExperimentConfig cfg = f.load();
  const Setup s = prepare(cfg);
  const SolverReport r = run_algorithm(cfg, s, cfg.algorithm);
  write_run(cfg, s, r, cfg.out);
  std::cout << r.algorithm << ": queries=" << r.queries_used
            << " certified=" << (r.certified ? "yes" : "no") << " stop=" << to_string(r.stop)
            << " best_value=" << format_double(r.best_value) << "\n";
  return 0;
}

int cmd_certify(const CommonFlags& f, const std::string& point) {
  const ExperimentConfig cfg = f.load();
  const Json j = run_certify(cfg, point);
  write_text(fs::path(cfg.out) / "certification.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_couple(const CommonFlags& f) {
  const ExperimentConfig cfg = f.load();
  const CoupleResult r = run_couple(cfg);
  write_text(fs::path(cfg.out) / "couple.json", r.json.dump(2) + "\n");
  std::cout << "trials=" << r.stats.trials << " deviation_frequency="
            << format_double(r.stats.deviation_frequency)
            << " decrease_frequency=" << format_double(r.stats.decrease_frequency) << "\n";
  return 0;
}

int cmd_bench(const CommonFlags& f) {
  const ExperimentConfig cfg = f.load();
  const Setup s = prepare(cfg);
  const fs::path dir = cfg.out;
  std::string summary = summary_header() + "\n";
  for (const std::string algo : {"prsrg", "prgd", "rsgd", "rsrg_unperturbed"}) {
    const SolverReport r = run_algorithm(cfg, s, algo);
    write_run(cfg, s, r, dir, "_" + algo);
    summary += summary_row(algo, s.problem.objective->size(), cfg.seed, r) + "\n";
    std::cout << algo << ": queries=" << r.queries_used
              << " certified=" << (r.certified ? "yes" : "no") << "\n";
  }
  write_text(dir / "summary.csv", summary);
  return 0;
}

int cmd_sweep(const CommonFlags& f) {
  const ExperimentConfig cfg = f.load();
  const auto cells = run_sweep(cfg, cfg.out);
  std::cout << "cells=" << cells.size() << " summary=" << (fs::path(cfg.out) / "summary.csv").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbed Riemannian stochastic recursive gradient experiments"};
  app.require_subcommand(1);
  CommonFlags run_f, cert_f, couple_f, bench_f, sweep_f;
  std::string point;
  auto* run = app.add_subcommand("run", "run the configured algorithm");
  run_f.attach(run);
  auto* cert = app.add_subcommand("certify", "certify a point as second-order stationary");
  cert_f.attach(cert);
  cert->add_option("-p,--point", point, "point file (CSV or PRSRGMAT)")->required();
  auto* couple = app.add_subcommand("couple", "coupled-sequence stuck-region experiment");
  couple_f.attach(couple);
  auto* bench = app.add_subcommand("bench", "run every algorithm on one instance");
  bench_f.attach(bench);
  auto* sweep = app.add_subcommand("sweep", "run the configured algorithm over n and seeds");
  sweep_f.attach(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (run->parsed()) return cmd_run(run_f);
    if (cert->parsed()) return cmd_certify(cert_f, point);
    if (couple->parsed()) return cmd_couple(couple_f);
    if (bench->parsed()) return cmd_bench(bench_f);
    if (sweep->parsed()) return cmd_sweep(sweep_f);
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNotSaddle;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const SchemaError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParameterError& e) {
    std::cerr << "invalid parameters: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
