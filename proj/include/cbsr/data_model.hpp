#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cbsr/errors.hpp"
#include "cbsr/mathutil.hpp"

namespace cbsr {

// Immutable container for an observational dataset: covariates, binary
// treatment labels and (optionally) outcomes. Values are validated once at
// construction and safe to share across threads afterwards.
struct Dataset {
  Matrix x;                         // n x d covariates
  std::vector<int> t;               // treatment labels in {0,1}
  std::optional<Vector> y;          // outcomes, if observed
  std::vector<std::string> names;   // covariate column names (x1..xd default)

  Dataset(Matrix x_in, std::vector<int> t_in,
          std::optional<Vector> y_in = std::nullopt,
          std::vector<std::string> names_in = {})
      : x(std::move(x_in)), t(std::move(t_in)), y(std::move(y_in)),
        names(std::move(names_in)) {
    const Eigen::Index n = x.rows();
    if (n < 2) throw ConfigError("Dataset: need at least 2 rows");
    if (Eigen::Index(t.size()) != n)
      throw ConfigError("Dataset: treatment length does not match x rows");
    for (size_t i = 0; i < t.size(); ++i)
      if (t[i] != 0 && t[i] != 1)
        throw DataError("Dataset: treatment values must be 0 or 1", long(i + 1));
    if (!x.allFinite()) throw DataError("Dataset: covariates contain non-finite values");
    if (y && y->size() != n)
      throw ConfigError("Dataset: outcome length does not match x rows");
    if (y && !y->allFinite()) throw DataError("Dataset: outcomes contain non-finite values");
    if (names.empty()) {
      names.reserve(size_t(x.cols()));
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        names.push_back("x" + std::to_string(j + 1));
    } else if (Eigen::Index(names.size()) != x.cols()) {
      throw ConfigError("Dataset: column name count does not match x cols");
    }
  }

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index d() const { return x.cols(); }

  Eigen::Index n_treated() const {
    return Eigen::Index(std::count(t.begin(), t.end(), 1));
  }
  Eigen::Index n_control() const { return n() - n_treated(); }
};

enum class FeatureKind { Raw, RawIntercept, Polynomial, Standardized };

// Declarative description of a design matrix built from raw covariates.
// When an intercept is present it occupies column 0 with constant value 1.
// Polynomial expansion of degree q yields all monomials of total degree <= q,
// ordered by total degree and then by descending exponent of the earliest
// column (1, x1, x2, x1^2, x1*x2, x2^2, ...).
struct FeatureMap {
  FeatureKind kind = FeatureKind::RawIntercept;
  int degree = 1;

  static FeatureMap raw() { return {FeatureKind::Raw, 1}; }
  static FeatureMap raw_intercept() { return {FeatureKind::RawIntercept, 1}; }
  static FeatureMap polynomial(int degree) { return {FeatureKind::Polynomial, degree}; }
  static FeatureMap standardized() { return {FeatureKind::Standardized, 1}; }

  bool has_intercept() const { return kind != FeatureKind::Raw; }

  const char* kind_name() const {
    switch (kind) {
      case FeatureKind::Raw: return "raw";
      case FeatureKind::RawIntercept: return "raw+intercept";
      case FeatureKind::Polynomial: return "polynomial";
      default: return "standardized";
    }
  }
};

namespace detail {

inline void enumerate_monomials(int d, int degree_left, int col,
                                std::vector<int>& expo,
                                std::vector<std::vector<int>>& out) {
  if (col == d) {
    out.push_back(expo);
    return;
  }
  for (int e = degree_left; e >= 0; --e) {
    expo[size_t(col)] = e;
    enumerate_monomials(d, degree_left - e, col + 1, expo, out);
  }
  expo[size_t(col)] = 0;
}

// Exponent vectors for all monomials of exact total degree g, ordered with
// the earliest column's exponent descending first.
inline std::vector<std::vector<int>> monomials_of_degree(int d, int g) {
  std::vector<std::vector<int>> out;
  std::vector<int> expo(size_t(d), 0);
  enumerate_monomials(d, g, 0, expo, out);
  // enumerate_monomials walks e from g down to 0 at each position but also
  // emits lower-degree tails; keep only the exact-degree ones, in order.
  std::vector<std::vector<int>> exact;
  for (auto& e : out) {
    int s = 0;
    for (int v : e) s += v;
    if (s == g) exact.push_back(e);
  }
  return exact;
}

inline std::string monomial_name(const std::vector<std::string>& base,
                                 const std::vector<int>& expo) {
  std::string s;
  for (size_t j = 0; j < expo.size(); ++j) {
    if (expo[j] == 0) continue;
    if (!s.empty()) s += "*";
    s += base[j];
    if (expo[j] > 1) s += "^" + std::to_string(expo[j]);
  }
  return s.empty() ? "1" : s;
}

}  // namespace detail

// Column labels of the expanded design, matching expand() column for column.
inline std::vector<std::string> feature_names(const Dataset& ds, const FeatureMap& fm) {
  std::vector<std::string> out;
  switch (fm.kind) {
    case FeatureKind::Raw:
      return ds.names;
    case FeatureKind::RawIntercept:
    case FeatureKind::Standardized:
      out.push_back("(intercept)");
      for (const auto& nm : ds.names)
        out.push_back(fm.kind == FeatureKind::Standardized ? nm + ".std" : nm);
      return out;
    case FeatureKind::Polynomial: {
      out.push_back("(intercept)");
      for (int g = 1; g <= fm.degree; ++g)
        for (const auto& expo : detail::monomials_of_degree(int(ds.d()), g))
          out.push_back(detail::monomial_name(ds.names, expo));
      return out;
    }
  }
  return out;
}

// Build the design matrix described by `fm`. Deterministic and column-stable.
inline Matrix expand(const Dataset& ds, const FeatureMap& fm) {
  const Eigen::Index n = ds.n(), d = ds.d();
  switch (fm.kind) {
    case FeatureKind::Raw:
      return ds.x;
    case FeatureKind::RawIntercept: {
      Matrix m(n, d + 1);
      m.col(0).setOnes();
      m.rightCols(d) = ds.x;
      return m;
    }
    case FeatureKind::Standardized: {
      Matrix m(n, d + 1);
      m.col(0).setOnes();
      for (Eigen::Index j = 0; j < d; ++j) {
        const double mu = ds.x.col(j).mean();
        const double sd = sample_sd(ds.x.col(j));
        if (sd <= 0.0)
          throw DataError("expand: zero-variance column under standardized",
                          -1, ds.names[size_t(j)]);
        m.col(j + 1) = (ds.x.col(j).array() - mu) / sd;
      }
      return m;
    }
    case FeatureKind::Polynomial: {
      if (fm.degree < 1) throw ConfigError("expand: polynomial degree must be >= 1");
      std::vector<std::vector<int>> expos;
      for (int g = 1; g <= fm.degree; ++g)
        for (auto& e : detail::monomials_of_degree(int(d), g)) expos.push_back(e);
      Matrix m(n, Eigen::Index(expos.size()) + 1);
      m.col(0).setOnes();
      for (size_t k = 0; k < expos.size(); ++k) {
        Vector col = Vector::Ones(n);
        for (Eigen::Index j = 0; j < d; ++j)
          for (int rep = 0; rep < expos[k][size_t(j)]; ++rep)
            col = col.cwiseProduct(ds.x.col(j));
        m.col(Eigen::Index(k) + 1) = col;
      }
      return m;
    }
  }
  throw ConfigError("expand: unknown feature kind");
}

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline double parse_cell(const std::string& cell, long row, const std::string& col) {
  if (cell.empty())
    throw DataError("load_csv: empty cell at row " + std::to_string(row) +
                        ", column '" + col + "'", row, col);
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  double value = 0.0;
  auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end)
    throw DataError("load_csv: non-numeric cell '" + cell + "' at row " +
                        std::to_string(row) + ", column '" + col + "'", row, col);
  if (!std::isfinite(value))
    throw DataError("load_csv: non-finite value at row " + std::to_string(row) +
                        ", column '" + col + "'", row, col);
  return value;
}

}  // namespace detail

// Read a comma-separated file with a header row. The named treatment column
// must parse to {0,1}; every other numeric column (minus the optional outcome
// column) becomes a covariate, file order preserved. Rows are numbered from 1
// at the first data line in error messages.
inline Dataset load_csv(const std::string& path, const std::string& treatment_col,
                        const std::optional<std::string>& outcome_col = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open file '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw DataError("load_csv: file '" + path + "' is empty");
  const std::vector<std::string> header = detail::split_csv_line(line);

  long t_idx = -1, y_idx = -1;
  for (size_t j = 0; j < header.size(); ++j) {
    if (header[j] == treatment_col) t_idx = long(j);
    if (outcome_col && header[j] == *outcome_col) y_idx = long(j);
  }
  if (t_idx < 0)
    throw DataError("load_csv: missing treatment column '" + treatment_col + "'");
  if (outcome_col && y_idx < 0)
    throw DataError("load_csv: missing outcome column '" + *outcome_col + "'");

  std::vector<size_t> x_cols;
  std::vector<std::string> x_names;
  for (size_t j = 0; j < header.size(); ++j) {
    if (long(j) == t_idx || long(j) == y_idx) continue;
    x_cols.push_back(j);
    x_names.push_back(header[j]);
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> t;
  std::vector<double> y;
  long row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("load_csv: row " + std::to_string(row) + " has " +
                          std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(header.size()), row);
    const double tv = detail::parse_cell(cells[size_t(t_idx)], row, treatment_col);
    if (tv != 0.0 && tv != 1.0)
      throw DataError("load_csv: treatment value outside {0,1} at row " +
                          std::to_string(row), row, treatment_col);
    t.push_back(int(tv));
    if (y_idx >= 0)
      y.push_back(detail::parse_cell(cells[size_t(y_idx)], row, *outcome_col));
    std::vector<double> xr;
    xr.reserve(x_cols.size());
    for (size_t k = 0; k < x_cols.size(); ++k)
      xr.push_back(detail::parse_cell(cells[x_cols[k]], row, x_names[k]));
    rows.push_back(std::move(xr));
  }

  Matrix x(Eigen::Index(rows.size()), Eigen::Index(x_cols.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < x_cols.size(); ++j)
      x(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];

  std::optional<Vector> yv;
  if (y_idx >= 0) {
    Vector v(Eigen::Index(y.size()));
    for (size_t i = 0; i < y.size(); ++i) v[Eigen::Index(i)] = y[i];
    yv = std::move(v);
  }
  return Dataset(std::move(x), std::move(t), std::move(yv), std::move(x_names));
}

// Write a Dataset back to CSV. 17 significant digits so that reloading
// reproduces every double bit-exactly.
inline void save_csv(const Dataset& ds, const std::string& path,
                     const std::string& treatment_col = "t",
                     const std::string& outcome_col = "y") {
  std::ofstream out(path);
  if (!out) throw DataError("save_csv: cannot open file '" + path + "' for writing");
  out << treatment_col;
  if (ds.y) out << "," << outcome_col;
  for (const auto& nm : ds.names) out << "," << nm;
  out << "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    out << ds.t[size_t(i)];
    if (ds.y) {
      std::snprintf(buf, sizeof buf, "%.17g", (*ds.y)[i]);
      out << "," << buf;
    }
    for (Eigen::Index j = 0; j < ds.d(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.x(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace cbsr
