#pragma once

#include <cstddef>
#include <vector>

namespace fairlens {

/// Dense real vector. All library code keeps entries finite; the few
/// operations that could produce non-finite values check and throw.
using Vector = std::vector<double>;

double dot(const Vector& a, const Vector& b);
double norm(const Vector& a);

/// a . b / (|a| |b|), clamped to [-1, 1].
/// Throws std::domain_error naming the offending argument on zero norm,
/// std::invalid_argument on dimension mismatch.
double cosine_similarity(const Vector& a, const Vector& b);

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Vector row(std::size_t r) const;
  void set_row(std::size_t r, const Vector& v);

  /// m * x
  Vector multiply(const Vector& x) const;
  /// m^T * x
  Vector multiply_transposed(const Vector& x) const;

  double trace() const;
  double frobenius_norm() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Eigendecomposition of a symmetric matrix. Eigenvalues are sorted
/// descending; eigenvectors[i] is the unit-norm eigenvector paired with
/// eigenvalues[i], and the set is orthonormal.
struct EigenResult {
  std::vector<double> eigenvalues;
  std::vector<Vector> eigenvectors;
};

/// Cyclic Jacobi eigensolver for symmetric matrices. Convergence when the
/// off-diagonal Frobenius norm falls below 1e-12 * |m|_F, capped at 100
/// sweeps. Throws std::invalid_argument for non-square or asymmetric input
/// (asymmetry tolerance 1e-9 relative to the Frobenius norm).
EigenResult symmetric_eigen(const Matrix& m);

/// Fisher-Pearson moment coefficient g1 = m3 / m2^(3/2) over central
/// moments. Requires at least 3 values and non-zero variance.
double sample_skewness(const std::vector<double>& values);

}  // namespace fairlens
