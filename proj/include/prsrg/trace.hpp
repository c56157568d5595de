#pragma once

// Run traces and their CSV form.
//
// Column order is fixed:
//   outer_t,inner_k,epoch_type,F_value,grad_norm_or_batch,estimator_gap,
//   u_norm,queries_cum,event
// Doubles are written in shortest round-trip form; an unmeasured estimator
// gap is an empty field.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prsrg/errors.hpp"

namespace prsrg {

enum class EpochType { Type1Descent, Type2Descent, Useful, Wasted, Escape, Baseline };

inline std::string_view to_string(EpochType e) {
  switch (e) {
    case EpochType::Type1Descent: return "type1_descent";
    case EpochType::Type2Descent: return "type2_descent";
    case EpochType::Useful: return "useful";
    case EpochType::Wasted: return "wasted";
    case EpochType::Escape: return "escape";
    case EpochType::Baseline: return "baseline";
  }
  return "?";
}

struct TraceRow {
  std::uint64_t outer_t = 0;
  std::uint64_t inner_k = 0;
  EpochType epoch_type = EpochType::Baseline;
  double F_value = 0.0;
  double grad_norm_or_batch = 0.0;
  double estimator_gap = std::nan("");
  double u_norm = 0.0;
  std::uint64_t queries_cum = 0;
  std::string event;
};

inline constexpr std::string_view kTraceHeader =
    "outer_t,inner_k,epoch_type,F_value,grad_norm_or_batch,estimator_gap,u_norm,"
    "queries_cum,event";

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct RunTrace {
  std::vector<TraceRow> rows;

  void push(TraceRow row) { rows.push_back(std::move(row)); }
  bool empty() const { return rows.empty(); }
  std::size_t size() const { return rows.size(); }

  bool queries_monotone() const {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].queries_cum < rows[i - 1].queries_cum) return false;
    return true;
  }

  void write_csv(std::ostream& os) const {
    os << kTraceHeader << '\n';
    for (const auto& r : rows) {
      os << r.outer_t << ',' << r.inner_k << ',' << to_string(r.epoch_type) << ','
         << format_double(r.F_value) << ',' << format_double(r.grad_norm_or_batch) << ',';
      if (!std::isnan(r.estimator_gap)) os << format_double(r.estimator_gap);
      os << ',' << format_double(r.u_norm) << ',' << r.queries_cum << ',' << r.event << '\n';
    }
  }

  std::string to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open trace file for writing: " + path);
    write_csv(f);
    if (!f) throw Error("failed writing trace file: " + path);
  }
};

}  // namespace prsrg
