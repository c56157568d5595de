#pragma once

// Dense matrix files.
//
// CSV: one row per line, comma-separated numbers, optional blank lines.
// PRSRGMAT: 8-byte magic "PRSRGMAT", u32 rows, u32 cols (little-endian), then
// rows*cols little-endian IEEE-754 doubles in row-major order.

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prsrg/errors.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/trace.hpp"

namespace prsrg {

inline constexpr char kMatrixMagic[8] = {'P', 'R', 'S', 'R', 'G', 'M', 'A', 'T'};

namespace detail {

template <class T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

inline double parse_number(const std::string& tok, std::size_t line, const std::string& path) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
  if (tok.empty() || pos != tok.size())
    throw SchemaError(path + ":" + std::to_string(line) + ": not a number: '" + tok + "'");
  return v;
}

}  // namespace detail

inline Matrix read_csv_matrix(std::istream& in, const std::string& name = "<csv>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const auto a = tok.find_first_not_of(" \t");
      const auto b = tok.find_last_not_of(" \t");
      tok = a == std::string::npos ? std::string() : tok.substr(a, b - a + 1);
      row.push_back(detail::parse_number(tok, lineno, name));
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw SchemaError(name + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(rows.front().size()) + " columns, found " +
                        std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw SchemaError(name + ": no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline void write_csv_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

inline Matrix read_binary_matrix(std::istream& in, const std::string& name = "<binary>") {
  char magic[8];
  std::uint32_t rows = 0, cols = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMatrixMagic, 8) != 0)
    throw SchemaError(name + ": missing PRSRGMAT header");
  if (!in.read(reinterpret_cast<char*>(&rows), 4) || !in.read(reinterpret_cast<char*>(&cols), 4))
    throw SchemaError(name + ": truncated header");
  rows = detail::byteswap_if_big(rows);
  cols = detail::byteswap_if_big(cols);
  Matrix m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      double v;
      if (!in.read(reinterpret_cast<char*>(&v), 8))
        throw SchemaError(name + ": truncated data (expected " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ")");
      m(i, j) = detail::byteswap_if_big(v);
    }
  }
  return m;
}

inline void write_binary_matrix(std::ostream& out, const Matrix& m) {
  out.write(kMatrixMagic, 8);
  const auto rows = detail::byteswap_if_big(static_cast<std::uint32_t>(m.rows()));
  const auto cols = detail::byteswap_if_big(static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = detail::byteswap_if_big(m(i, j));
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

/// Reads either format, choosing by the magic bytes.
inline Matrix load_matrix(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SchemaError("cannot open matrix file: " + path);
  char head[8] = {};
  f.read(head, 8);
  const bool binary = f.gcount() == 8 && std::memcmp(head, kMatrixMagic, 8) == 0;
  f.clear();
  f.seekg(0);
  return binary ? read_binary_matrix(f, path) : read_csv_matrix(f, path);
}

inline void save_matrix(const std::string& path, const Matrix& m, bool binary) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open matrix file for writing: " + path);
  if (binary)
    write_binary_matrix(f, m);
  else
    write_csv_matrix(f, m);
}

}  // namespace prsrg
