#include "oarf/dataset.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace oarf {

int Dataset::n_treated() const {
  int count = 0;
  for (int di : d) count += di;
  return count;
}

void Dataset::validate() const {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (y.size() != n) throw std::invalid_argument("dataset: outcome length != number of rows");
  if (d.size() != n) throw std::invalid_argument("dataset: treatment length != number of rows");
  if (col_meta.size() != static_cast<std::size_t>(x.cols()))
    throw std::invalid_argument("dataset: column metadata length != number of columns");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) throw std::invalid_argument("dataset: non-finite outcome at row " + std::to_string(i));
    if (d[i] != 0 && d[i] != 1)
      throw std::invalid_argument("dataset: treatment value " + std::to_string(d[i]) + " at row " + std::to_string(i) +
                                  " is not in {0,1}");
  }
  for (int j = 0; j < x.cols(); ++j) {
    auto column = x.col(j);
    bool binary = true;
    for (double v : column) {
      if (!std::isfinite(v))
        throw std::invalid_argument("dataset: non-finite value in column " + col_meta[static_cast<std::size_t>(j)].name);
      if (v != 0.0 && v != 1.0) binary = false;
    }
    if (col_meta[static_cast<std::size_t>(j)].kind == ColumnKind::binary && !binary)
      throw std::invalid_argument("dataset: column " + col_meta[static_cast<std::size_t>(j)].name +
                                  " tagged binary but holds values outside {0,1}");
  }
}

Dataset subset(const Dataset& data, std::span<const int> rows) {
  Dataset out;
  const int m = static_cast<int>(rows.size());
  out.x = Matrix(m, data.p());
  out.y.resize(static_cast<std::size_t>(m));
  out.d.resize(static_cast<std::size_t>(m));
  out.col_meta = data.col_meta;
  for (int i = 0; i < m; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    out.y[static_cast<std::size_t>(i)] = data.y[static_cast<std::size_t>(r)];
    out.d[static_cast<std::size_t>(i)] = data.d[static_cast<std::size_t>(r)];
    for (int j = 0; j < data.p(); ++j) out.x(i, j) = data.x(r, j);
  }
  return out;
}

ColumnKind infer_kind(std::span<const double> values) {
  bool binary = true;
  bool integral = true;
  for (double v : values) {
    if (v != 0.0 && v != 1.0) binary = false;
    if (v != std::floor(v)) integral = false;
  }
  if (binary) return ColumnKind::binary;
  if (integral) return ColumnKind::ordinal;
  return ColumnKind::continuous;
}

}  // namespace oarf
