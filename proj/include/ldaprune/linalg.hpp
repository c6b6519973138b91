#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ldaprune {

// Small dense row-major matrix of doubles for the statistics code.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& values() const noexcept { return data_; }

  Matrix transposed() const;
  double trace() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
std::vector<double> operator*(const Matrix& a, std::span<const double> x);

// Lower-triangular L with A = L L^T. Throws Numeric when A is not positive definite.
Matrix cholesky(const Matrix& a);
// Solves L y = b (forward) and L^T x = y (backward) for lower-triangular L.
std::vector<double> forward_substitute(const Matrix& lower, std::span<const double> b);
std::vector<double> backward_substitute_transposed(const Matrix& lower, std::span<const double> y);
double cholesky_log_det(const Matrix& lower);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
  int sweeps = 0;
};

// Cyclic Jacobi rotations; throws Convergence after `max_sweeps` without the
// off-diagonal norm dropping below tolerance.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, int max_sweeps = 100);

}  // namespace ldaprune
