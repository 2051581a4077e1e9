#pragma once

#include <span>
#include <string>
#include <vector>

namespace oarf {

// Column-major numeric matrix. Tree training walks one feature at a time,
// so columns are kept contiguous.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int n, int p) : n_(n), p_(p), v_(static_cast<std::size_t>(n) * static_cast<std::size_t>(p), 0.0) {}

  int rows() const { return n_; }
  int cols() const { return p_; }

  double operator()(int i, int j) const { return v_[idx(i, j)]; }
  double& operator()(int i, int j) { return v_[idx(i, j)]; }

  std::span<const double> col(int j) const {
    return {v_.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(n_), static_cast<std::size_t>(n_)};
  }
  std::span<double> col(int j) {
    return {v_.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(n_), static_cast<std::size_t>(n_)};
  }

 private:
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(i);
  }

  int n_ = 0;
  int p_ = 0;
  std::vector<double> v_;
};

enum class ColumnKind { continuous, ordinal, binary };

struct ColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
};

// Covariates X (n rows, p columns), outcome y, binary treatment d.
struct Dataset {
  Matrix x;
  std::vector<double> y;
  std::vector<int> d;
  std::vector<ColumnInfo> col_meta;

  int n() const { return x.rows(); }
  int p() const { return x.cols(); }

  int n_treated() const;

  // Throws std::invalid_argument on any violated invariant: length
  // mismatches, non-finite values, non-binary treatment, or a column whose
  // declared kind disagrees with its values.
  void validate() const;
};

// Rows of `data` at `rows` (duplicates allowed), in order.
Dataset subset(const Dataset& data, std::span<const int> rows);

// Infers binary/ordinal/continuous from observed values.
ColumnKind infer_kind(std::span<const double> values);

}  // namespace oarf
