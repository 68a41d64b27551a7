#include "fairlens/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fairlens {

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: dimension mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(const Vector& a) { return std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0)); }

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0) throw std::domain_error("cosine_similarity: first argument has zero norm");
  if (nb == 0.0) throw std::domain_error("cosine_similarity: second argument has zero norm");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vector Matrix::row(std::size_t r) const {
  return Vector(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
}

void Matrix::set_row(std::size_t r, const Vector& v) {
  if (v.size() != cols_) throw std::invalid_argument("set_row: dimension mismatch");
  std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

Vector Matrix::multiply(const Vector& x) const {
  if (x.size() != cols_) throw std::invalid_argument("Matrix::multiply: dimension mismatch");
  Vector y(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* rp = data_.data() + r * cols_;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) acc += rp[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vector Matrix::multiply_transposed(const Vector& x) const {
  if (x.size() != rows_) throw std::invalid_argument("Matrix::multiply_transposed: dimension mismatch");
  Vector y(cols_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* rp = data_.data() + r * cols_;
    const double xr = x[r];
    for (std::size_t c = 0; c < cols_; ++c) y[c] += rp[c] * xr;
  }
  return y;
}

double Matrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
  return t;
}

double Matrix::frobenius_norm() const {
  return std::sqrt(std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0));
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace

EigenResult symmetric_eigen(const Matrix& m) {
  const std::size_t n = m.rows();
  if (n == 0 || n != m.cols()) {
    throw std::invalid_argument("symmetric_eigen: matrix must be square and non-empty");
  }
  const double scale = std::max(1.0, m.frobenius_norm());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-9 * scale) {
        throw std::invalid_argument("symmetric_eigen: matrix is not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }

  Matrix a = m;
  // Enforce exact symmetry so rotations stay consistent.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }

  Matrix v = Matrix::identity(n);
  const double norm_f = a.frobenius_norm();
  const double tol = 1e-12 * norm_f;

  for (int sweep = 0; sweep < 100 && norm_f > 0.0; ++sweep) {
    if (off_diagonal_norm(a) <= tol) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenResult result;
  result.eigenvalues.reserve(n);
  result.eigenvectors.reserve(n);
  for (std::size_t idx : order) {
    result.eigenvalues.push_back(a(idx, idx));
    Vector col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v(k, idx);
    result.eigenvectors.push_back(std::move(col));
  }
  return result;
}

double sample_skewness(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 3) throw std::domain_error("sample_skewness: need at least 3 values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double m2 = 0.0;
  double m3 = 0.0;
  for (double x : values) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  if (m2 <= 0.0) throw std::domain_error("sample_skewness: zero variance");
  return m3 / std::pow(m2, 1.5);
}

}  // namespace fairlens
