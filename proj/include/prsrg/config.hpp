#pragma once

// Experiment configuration files.
//
// Grammar (one item per line, surrounding whitespace ignored):
//
//   file     := { blank | comment | section | entry }
//   comment  := ('#' | ';') any-text
//   section  := '[' name ']'
//   entry    := key '=' value
//   name,key := [A-Za-z0-9_.-]+
//
// Entries must follow a section header; a key may appear once per section and
// a section once per file. Values are raw text to the end of the line with
// surrounding whitespace removed. Lists are comma-separated. Every error
// carries the 1-based line number of the offending item.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prsrg/baselines.hpp"
#include "prsrg/errors.hpp"
#include "prsrg/solver.hpp"
#include "prsrg/trace.hpp"

namespace prsrg {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct ConfigSection {
  std::string name;
  std::size_t line = 0;
  std::vector<ConfigEntry> entries;

  const ConfigEntry* find(std::string_view key) const {
    for (const auto& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

inline bool valid_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
  });
}

}  // namespace detail

class ConfigDocument {
 public:
  static ConfigDocument parse(std::string_view text) {
    ConfigDocument doc;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const std::string_view raw =
          text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++lineno;
      const std::string line = detail::trim(raw);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(lineno, "unterminated section header");
        const std::string name = detail::trim(std::string_view(line).substr(1, line.size() - 2));
        if (!detail::valid_name(name)) throw ConfigError(lineno, "invalid section name '" + name + "'");
        if (doc.section(name))
          throw ConfigError(lineno, "duplicate section [" + name + "]");
        doc.sections_.push_back(ConfigSection{name, lineno, {}});
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(lineno, "expected 'key = value'");
      const std::string key = detail::trim(std::string_view(line).substr(0, eq));
      const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
      if (!detail::valid_name(key)) throw ConfigError(lineno, "invalid key '" + key + "'");
      if (doc.sections_.empty()) throw ConfigError(lineno, "entry '" + key + "' outside any section");
      auto& sec = doc.sections_.back();
      if (sec.find(key))
        throw ConfigError(lineno, "duplicate key '" + key + "' in [" + sec.name + "]");
      sec.entries.push_back(ConfigEntry{key, value, lineno});
    }
    return doc;
  }

  static ConfigDocument load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(0, "cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < sections_.size(); ++i) {
      if (i) out += '\n';
      out += '[' + sections_[i].name + "]\n";
      for (const auto& e : sections_[i].entries) out += e.key + " = " + e.value + '\n';
    }
    return out;
  }

  const ConfigSection* section(std::string_view name) const {
    for (const auto& s : sections_)
      if (s.name == name) return &s;
    return nullptr;
  }

  void set(const std::string& section_name, const std::string& key, const std::string& value) {
    auto it = std::find_if(sections_.begin(), sections_.end(),
                           [&](const ConfigSection& s) { return s.name == section_name; });
    if (it == sections_.end()) {
      sections_.push_back(ConfigSection{section_name, 0, {}});
      it = std::prev(sections_.end());
    }
    for (auto& e : it->entries)
      if (e.key == key) {
        e.value = value;
        return;
      }
    it->entries.push_back(ConfigEntry{key, value, 0});
  }

  const std::vector<ConfigSection>& sections() const { return sections_; }

 private:
  std::vector<ConfigSection> sections_;
};

namespace detail {

inline double to_double(const ConfigEntry& e) {
  const std::string& s = e.value;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(e.line, "'" + e.key + "' expects a number, got '" + s + "'");
  return v;
}

inline std::uint64_t to_uint(const ConfigEntry& e) {
  const std::string& s = e.value;
  if (s == "max" || s == "unlimited") return std::numeric_limits<std::uint64_t>::max();
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(e.line, "'" + e.key + "' expects a nonnegative integer, got '" + s + "'");
  return v;
}

inline bool to_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError(e.line, "'" + e.key + "' expects true or false, got '" + e.value + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
  return out;
}

inline std::string fmt_uint(std::uint64_t v) {
  return v == std::numeric_limits<std::uint64_t>::max() ? "max" : std::to_string(v);
}

/// Typed reader over one section that rejects unknown keys.
class SectionReader {
 public:
  SectionReader(const ConfigDocument& doc, std::string_view name) : sec_(doc.section(name)) {}

  const ConfigEntry* get(std::string_view key) {
    used_.emplace_back(key);
    return sec_ ? sec_->find(key) : nullptr;
  }
  void read(std::string_view key, double& out) {
    if (auto* e = get(key)) out = to_double(*e);
  }
  void read(std::string_view key, std::optional<double>& out) {
    if (auto* e = get(key)) out = to_double(*e);
  }
  void read(std::string_view key, std::uint64_t& out) {
    if (auto* e = get(key)) out = to_uint(*e);
  }
  void read(std::string_view key, std::optional<std::uint64_t>& out) {
    if (auto* e = get(key)) out = to_uint(*e);
  }
  void read(std::string_view key, std::string& out) {
    if (auto* e = get(key)) out = e->value;
  }
  void read(std::string_view key, bool& out) {
    if (auto* e = get(key)) out = to_bool(*e);
  }

  void finish() const {
    if (!sec_) return;
    for (const auto& e : sec_->entries)
      if (std::find(used_.begin(), used_.end(), e.key) == used_.end())
        throw ConfigError(e.line, "unknown key '" + e.key + "' in [" + sec_->name + "]");
  }

 private:
  const ConfigSection* sec_;
  std::vector<std::string> used_;
};

}  // namespace detail

struct ProblemConfig {
  /// rayleigh | streaming_rayleigh | quadratic | pca
  std::string kind = "rayleigh";
  std::uint64_t n = 1000;
  /// "gap:<g>" or an explicit descending list.
  std::string spectrum = "gap:1";
  double noise_scale = 0.5;
  std::uint64_t seed = 1;
  std::uint64_t rotation_seed = 0;
  double gamma = 1.0;
  double L_top = 1.0;
  /// Data matrix for pca (CSV or PRSRGMAT); generated when empty.
  std::string data;
  /// v<k> (k-th eigenvector), e2 (alias of v2), random, origin, or file:<path>.
  std::string start = "v2";

  bool operator==(const ProblemConfig&) const = default;
};

struct SolverConfig {
  double epsilon = 1e-3;
  double delta = 0.1;
  /// finite_sum | online
  std::string mode = "finite_sum";
  std::optional<double> eta, r, D, c0, ell, rho, L, sigma;
  std::optional<std::uint64_t> m, b, B, T_max;

  bool operator==(const SolverConfig&) const = default;
};

struct ConstantsConfig {
  double c_eta = 0.1, c_T = 20.0, c_r = 1.0, c_m = 1.0, c_B = 16.0, c2 = 1.0, c3 = 1.0;

  bool operator==(const ConstantsConfig&) const = default;
  SolverConstants solver() const { return {c_eta, c_T, c_r, c_m, c_B}; }
};

struct EstimateConfig {
  std::uint64_t samples = 200;
  double safety = 1.2;

  bool operator==(const EstimateConfig&) const = default;
};

struct CoupleConfig {
  double nu = 0.1;
  std::uint64_t trials = 50;

  bool operator==(const CoupleConfig&) const = default;
};

struct BaselineSection {
  double eta = 0.0;  // 0 means the solver's derived eta
  double r = 0.0;    // 0 means the solver's derived r
  std::uint64_t escape_steps = 0;  // 0 means T_max
  std::uint64_t batch = 0;         // 0 means the solver's b

  bool operator==(const BaselineSection&) const = default;
};

struct SweepConfig {
  std::vector<std::uint64_t> n = {256, 1024, 4096};
  std::uint64_t seeds = 10;

  bool operator==(const SweepConfig&) const = default;
};

struct ExperimentConfig {
  std::string manifold = "sphere:100";
  /// prsrg | prgd | rsgd | rsrg_unperturbed
  std::string algorithm = "prsrg";
  std::uint64_t seed = 1;
  std::uint64_t budget = std::numeric_limits<std::uint64_t>::max();
  std::string out = "out";
  /// epoch | step
  std::string trace = "epoch";
  bool exact_gaps = false;
  ProblemConfig problem;
  SolverConfig solver;
  ConstantsConfig constants;
  EstimateConfig estimate;
  CoupleConfig couple;
  BaselineSection baseline;
  SweepConfig sweep;

  bool operator==(const ExperimentConfig&) const = default;

  static ExperimentConfig from_document(const ConfigDocument& doc) {
    static const std::vector<std::string> known = {"experiment", "problem", "solver",  "constants",
                                                   "estimate",   "couple",  "baseline", "sweep"};
    for (const auto& s : doc.sections())
      if (std::find(known.begin(), known.end(), s.name) == known.end())
        throw ConfigError(s.line, "unknown section [" + s.name + "]");

    ExperimentConfig c;
    {
      detail::SectionReader r(doc, "experiment");
      r.read("manifold", c.manifold);
      r.read("algorithm", c.algorithm);
      r.read("seed", c.seed);
      r.read("budget", c.budget);
      r.read("out", c.out);
      r.read("trace", c.trace);
      r.read("exact_gaps", c.exact_gaps);
      r.finish();
      check_choice(doc, "experiment", "algorithm", c.algorithm,
                   {"prsrg", "prgd", "rsgd", "rsrg_unperturbed"});
      check_choice(doc, "experiment", "trace", c.trace, {"epoch", "step"});
    }
    {
      detail::SectionReader r(doc, "problem");
      auto& p = c.problem;
      r.read("kind", p.kind);
      r.read("n", p.n);
      r.read("spectrum", p.spectrum);
      r.read("noise_scale", p.noise_scale);
      r.read("seed", p.seed);
      r.read("rotation_seed", p.rotation_seed);
      r.read("gamma", p.gamma);
      r.read("L_top", p.L_top);
      r.read("data", p.data);
      r.read("start", p.start);
      r.finish();
      check_choice(doc, "problem", "kind", p.kind,
                   {"rayleigh", "streaming_rayleigh", "quadratic", "pca"});
    }
    {
      detail::SectionReader r(doc, "solver");
      auto& s = c.solver;
      r.read("epsilon", s.epsilon);
      r.read("delta", s.delta);
      r.read("mode", s.mode);
      r.read("eta", s.eta);
      r.read("r", s.r);
      r.read("D", s.D);
      r.read("c0", s.c0);
      r.read("ell", s.ell);
      r.read("rho", s.rho);
      r.read("L", s.L);
      r.read("sigma", s.sigma);
      r.read("m", s.m);
      r.read("b", s.b);
      r.read("B", s.B);
      r.read("T_max", s.T_max);
      r.finish();
      check_choice(doc, "solver", "mode", s.mode, {"finite_sum", "online"});
      if (!(s.epsilon > 0.0)) throw ConfigError(line_of(doc, "solver", "epsilon"), "epsilon must be positive");
      if (!(s.delta > 0.0)) throw ConfigError(line_of(doc, "solver", "delta"), "delta must be positive");
    }
    {
      detail::SectionReader r(doc, "constants");
      auto& k = c.constants;
      r.read("c_eta", k.c_eta);
      r.read("c_T", k.c_T);
      r.read("c_r", k.c_r);
      r.read("c_m", k.c_m);
      r.read("c_B", k.c_B);
      r.read("c2", k.c2);
      r.read("c3", k.c3);
      r.finish();
      const std::pair<const char*, double> checks[] = {
          {"c_eta", k.c_eta}, {"c_T", k.c_T}, {"c_r", k.c_r}, {"c_m", k.c_m},
          {"c_B", k.c_B},     {"c2", k.c2},   {"c3", k.c3}};
      for (const auto& [key, v] : checks)
        if (!(v > 0.0)) throw ConfigError(line_of(doc, "constants", key), std::string(key) + " must be positive");
    }
    {
      detail::SectionReader r(doc, "estimate");
      r.read("samples", c.estimate.samples);
      r.read("safety", c.estimate.safety);
      r.finish();
    }
    {
      detail::SectionReader r(doc, "couple");
      r.read("nu", c.couple.nu);
      r.read("trials", c.couple.trials);
      r.finish();
    }
    {
      detail::SectionReader r(doc, "baseline");
      r.read("eta", c.baseline.eta);
      r.read("r", c.baseline.r);
      r.read("escape_steps", c.baseline.escape_steps);
      r.read("batch", c.baseline.batch);
      r.finish();
    }
    {
      detail::SectionReader r(doc, "sweep");
      if (const auto* e = r.get("n")) {
        c.sweep.n.clear();
        for (const auto& tok : detail::split_list(e->value))
          c.sweep.n.push_back(detail::to_uint(ConfigEntry{"n", tok, e->line}));
        if (c.sweep.n.empty()) throw ConfigError(e->line, "sweep n list is empty");
      }
      r.read("seeds", c.sweep.seeds);
      r.finish();
    }
    return c;
  }

  static ExperimentConfig parse(std::string_view text) {
    return from_document(ConfigDocument::parse(text));
  }

  static ExperimentConfig load(const std::string& path) {
    return from_document(ConfigDocument::load(path));
  }

  ConfigDocument to_document() const {
    ConfigDocument d;
    auto num = [](double v) { return std::isinf(v) ? std::string("inf") : format_double(v); };
    d.set("experiment", "manifold", manifold);
    d.set("experiment", "algorithm", algorithm);
    d.set("experiment", "seed", std::to_string(seed));
    d.set("experiment", "budget", detail::fmt_uint(budget));
    d.set("experiment", "out", out);
    d.set("experiment", "trace", trace);
    d.set("experiment", "exact_gaps", exact_gaps ? "true" : "false");
    d.set("problem", "kind", problem.kind);
    d.set("problem", "n", detail::fmt_uint(problem.n));
    d.set("problem", "spectrum", problem.spectrum);
    d.set("problem", "noise_scale", num(problem.noise_scale));
    d.set("problem", "seed", std::to_string(problem.seed));
    d.set("problem", "rotation_seed", std::to_string(problem.rotation_seed));
    d.set("problem", "gamma", num(problem.gamma));
    d.set("problem", "L_top", num(problem.L_top));
    if (!problem.data.empty()) d.set("problem", "data", problem.data);
    d.set("problem", "start", problem.start);
    d.set("solver", "epsilon", num(solver.epsilon));
    d.set("solver", "delta", num(solver.delta));
    d.set("solver", "mode", solver.mode);
    auto opt_d = [&](const char* k, const std::optional<double>& v) {
      if (v) d.set("solver", k, num(*v));
    };
    auto opt_u = [&](const char* k, const std::optional<std::uint64_t>& v) {
      if (v) d.set("solver", k, detail::fmt_uint(*v));
    };
    opt_d("eta", solver.eta);
    opt_d("r", solver.r);
    opt_d("D", solver.D);
    opt_d("c0", solver.c0);
    opt_d("ell", solver.ell);
    opt_d("rho", solver.rho);
    opt_d("L", solver.L);
    opt_d("sigma", solver.sigma);
    opt_u("m", solver.m);
    opt_u("b", solver.b);
    opt_u("B", solver.B);
    opt_u("T_max", solver.T_max);
    d.set("constants", "c_eta", num(constants.c_eta));
    d.set("constants", "c_T", num(constants.c_T));
    d.set("constants", "c_r", num(constants.c_r));
    d.set("constants", "c_m", num(constants.c_m));
    d.set("constants", "c_B", num(constants.c_B));
    d.set("constants", "c2", num(constants.c2));
    d.set("constants", "c3", num(constants.c3));
    d.set("estimate", "samples", std::to_string(estimate.samples));
    d.set("estimate", "safety", num(estimate.safety));
    d.set("couple", "nu", num(couple.nu));
    d.set("couple", "trials", std::to_string(couple.trials));
    d.set("baseline", "eta", num(baseline.eta));
    d.set("baseline", "r", num(baseline.r));
    d.set("baseline", "escape_steps", std::to_string(baseline.escape_steps));
    d.set("baseline", "batch", std::to_string(baseline.batch));
    std::string ns;
    for (std::size_t i = 0; i < sweep.n.size(); ++i) ns += (i ? "," : "") + std::to_string(sweep.n[i]);
    d.set("sweep", "n", ns);
    d.set("sweep", "seeds", std::to_string(sweep.seeds));
    return d;
  }

  std::string to_string() const { return to_document().to_string(); }

 private:
  static std::size_t line_of(const ConfigDocument& doc, std::string_view sec, std::string_view key) {
    if (const auto* s = doc.section(sec)) {
      if (const auto* e = s->find(key)) return e->line;
      return s->line;
    }
    return 0;
  }

  static void check_choice(const ConfigDocument& doc, std::string_view sec, std::string_view key,
                           const std::string& value, std::initializer_list<std::string_view> allowed) {
    for (auto a : allowed)
      if (value == a) return;
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError(line_of(doc, sec, key),
                      "'" + std::string(key) + "' must be one of " + list + ", got '" + value + "'");
  }
};

}  // namespace prsrg
