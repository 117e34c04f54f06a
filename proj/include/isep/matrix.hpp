#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace isep {

/// Dense row-major matrix of doubles. Shapes are dynamic; storage is reused
/// across assignments of equal size, which keeps the training loop free of
/// repeated allocation.
struct Matrix2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix2D() = default;
  Matrix2D(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  std::size_t size() const { return rows * cols; }

  void resize(std::size_t r, std::size_t c) {
    rows = r;
    cols = c;
    data.assign(r * c, 0.0);
  }

  void fill(double v) { data.assign(data.size(), v); }
};

/// Y = X * W^T.  X is (n, k), W is (m, k), Y becomes (n, m).
///
/// Both operands are traversed row-wise so every inner loop is a contiguous
/// dot product; 2x2 register blocking keeps four accumulators live, which is
/// what gets strict-FP code vectorized well on one core.
inline void matmul_nt(const Matrix2D& x, const Matrix2D& w, Matrix2D& y) {
  const std::size_t n = x.rows, k = x.cols, m = w.rows;
  y.resize(n, m);
  std::size_t i = 0;
  for (; i + 1 < n; i += 2) {
    const double* xr0 = x.row(i);
    const double* xr1 = x.row(i + 1);
    double* yr0 = y.row(i);
    double* yr1 = y.row(i + 1);
    std::size_t j = 0;
    for (; j + 1 < m; j += 2) {
      const double* wr0 = w.row(j);
      const double* wr1 = w.row(j + 1);
      double s00 = 0.0, s01 = 0.0, s10 = 0.0, s11 = 0.0;
#pragma omp simd reduction(+ : s00, s01, s10, s11)
      for (std::size_t t = 0; t < k; ++t) {
        const double a0 = xr0[t];
        const double a1 = xr1[t];
        const double b0 = wr0[t];
        const double b1 = wr1[t];
        s00 += a0 * b0;
        s01 += a0 * b1;
        s10 += a1 * b0;
        s11 += a1 * b1;
      }
      yr0[j] = s00;
      yr0[j + 1] = s01;
      yr1[j] = s10;
      yr1[j + 1] = s11;
    }
    for (; j < m; ++j) {
      const double* wr = w.row(j);
      double s0 = 0.0, s1 = 0.0;
#pragma omp simd reduction(+ : s0, s1)
      for (std::size_t t = 0; t < k; ++t) {
        s0 += xr0[t] * wr[t];
        s1 += xr1[t] * wr[t];
      }
      yr0[j] = s0;
      yr1[j] = s1;
    }
  }
  for (; i < n; ++i) {
    const double* xr = x.row(i);
    double* yr = y.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const double* wr = w.row(j);
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t t = 0; t < k; ++t) s += xr[t] * wr[t];
      yr[j] = s;
    }
  }
}

/// Y += X * W.  X is (n, k), W is (k, m), Y must already be (n, m).
/// Accumulating axpy formulation: unit-stride over both W rows and Y rows.
inline void matmul_nn_acc(const Matrix2D& x, const Matrix2D& w, Matrix2D& y) {
  const std::size_t n = x.rows, k = x.cols, m = w.cols;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.row(i);
    double* yr = y.row(i);
    for (std::size_t t = 0; t < k; ++t) {
      const double a = xr[t];
      const double* wr = w.row(t);
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) yr[j] += a * wr[j];
    }
  }
}

/// Y += X^T * W.  X is (k, n), W is (k, m), Y must already be (n, m).
/// Same axpy shape as above; used for weight gradients (dZ^T * A).
inline void matmul_tn_acc(const Matrix2D& x, const Matrix2D& w, Matrix2D& y) {
  const std::size_t k = x.rows, n = x.cols, m = w.cols;
  for (std::size_t t = 0; t < k; ++t) {
    const double* xr = x.row(t);
    const double* wr = w.row(t);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = xr[i];
      double* yr = y.row(i);
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) yr[j] += a * wr[j];
    }
  }
}

inline bool all_finite(const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

inline bool all_finite(const Matrix2D& m) { return all_finite(m.data.data(), m.data.size()); }

inline bool all_finite(const std::vector<double>& v) { return all_finite(v.data(), v.size()); }

/// Thrown when a forward pass, loss or gradient produces a non-finite value.
/// Training code catches it at step granularity and reports the step index.
struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& what_happened)
      : std::runtime_error(what_happened) {}
};

inline void require_finite(const Matrix2D& m, const char* what) {
  if (!all_finite(m)) throw NonFiniteError(std::string("non-finite values in ") + what);
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value in ") + what);
}

}  // namespace isep
