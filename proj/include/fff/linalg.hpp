#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fff/errors.hpp"
#include "fff/rng.hpp"

namespace fff {

using Vector = std::vector<double>;

// Dense row-major matrix. Deliberately minimal: the networks in this library
// are small enough that a plain O(n^3) kernel set is both fast enough and
// easy to audit.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  Vector row_vector(std::size_t i) const {
    return Vector(row(i), row(i) + cols_);
  }
  void set_row(std::size_t i, const Vector& v) {
    for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) = v[j];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers.

inline double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2_squared(const Vector& a) { return dot(a, a); }
inline double norm2(const Vector& a) { return std::sqrt(norm2_squared(a)); }

inline void axpy(double alpha, const Vector& x, Vector& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// y = A x
inline Vector matvec(const Matrix& a, const Vector& x) {
  if (x.size() != a.cols()) throw DimensionMismatch("matvec: size mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

// y = A^T x
inline Vector matvec_t(const Matrix& a, const Vector& x) {
  if (x.size() != a.rows()) throw DimensionMismatch("matvec_t: size mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += r[j] * x[i];
  }
  return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: size mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

// ||A - I||_F for square A.
inline double deviation_from_identity(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double d = a(i, j) - (i == j ? 1.0 : 0.0);
      s += d * d;
    }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// LU decomposition with partial pivoting. Shared backend for log|det| and
// linear solves; a pivot below 1e-300 in absolute value is treated as
// numerically singular.

struct LuDecomposition {
  Matrix lu;               // L (unit diagonal, strictly lower) and U packed together
  std::vector<std::size_t> perm;  // row permutation applied to the input
  int sign = 1;            // determinant sign of the permutation
};

inline LuDecomposition lu_decompose(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("lu_decompose: matrix not square");
  const std::size_t n = a.rows();
  LuDecomposition d{a, std::vector<std::size_t>(n), 1};
  for (std::size_t i = 0; i < n; ++i) d.perm[i] = i;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(d.lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(d.lu(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (!(best >= 1e-300)) {
      throw SingularMatrix("lu_decompose: pivot " + std::to_string(best) + " at column " +
                           std::to_string(k));
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(d.lu(k, j), d.lu(p, j));
      std::swap(d.perm[k], d.perm[p]);
      d.sign = -d.sign;
    }
    const double pivot = d.lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = d.lu(i, k) / pivot;
      d.lu(i, k) = m;
      for (std::size_t j = k + 1; j < n; ++j) d.lu(i, j) -= m * d.lu(k, j);
    }
  }
  return d;
}

// log |det A|. Sign of the determinant is discarded: every use in this
// library is a change-of-variables term.
inline double log_abs_det(const LuDecomposition& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.lu.rows(); ++i) s += std::log(std::abs(d.lu(i, i)));
  return s;
}

inline double log_abs_det(const Matrix& a) { return log_abs_det(lu_decompose(a)); }

inline Vector solve(const LuDecomposition& d, const Vector& b) {
  const std::size_t n = d.lu.rows();
  if (b.size() != n) throw DimensionMismatch("solve: size mismatch");
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[d.perm[i]];
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) x[i] -= d.lu(i, j) * x[j];
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = i + 1; j < n; ++j) x[i] -= d.lu(i, j) * x[j];
    x[i] /= d.lu(i, i);
  }
  return x;
}

inline Vector solve(const Matrix& a, const Vector& b) { return solve(lu_decompose(a), b); }

inline Matrix inverse(const Matrix& a) {
  const LuDecomposition d = lu_decompose(a);
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Vector col = solve(d, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Hutchinson probes. All three families satisfy E[v v^T] = I, which is the
// only property the trace estimator needs.

enum class ProbeKind { gaussian, rademacher, sphere };

inline Vector sample_probe(std::size_t dim, ProbeKind kind, RngStream& rng) {
  Vector v(dim);
  switch (kind) {
    case ProbeKind::gaussian:
      for (auto& x : v) x = rng.gaussian();
      break;
    case ProbeKind::rademacher:
      for (auto& x : v) x = (rng.next_u64() & 1u) ? 1.0 : -1.0;
      break;
    case ProbeKind::sphere: {
      // Uniform on the sphere of radius sqrt(dim), so E[v v^T] = I.
      double n2 = 0.0;
      do {
        n2 = 0.0;
        for (auto& x : v) {
          x = rng.gaussian();
          n2 += x * x;
        }
      } while (n2 == 0.0);
      const double scale = std::sqrt(static_cast<double>(dim) / n2);
      for (auto& x : v) x *= scale;
      break;
    }
  }
  return v;
}

// Unbiased estimate of tr(A) from k probes: mean of v^T A v.
inline double hutchinson_trace(const Matrix& a, int k_probes, ProbeKind kind, RngStream& rng) {
  if (a.rows() != a.cols()) throw DimensionMismatch("hutchinson_trace: matrix not square");
  if (k_probes < 1) throw ConfigError("hutchinson_trace: k_probes must be >= 1");
  double acc = 0.0;
  for (int k = 0; k < k_probes; ++k) {
    const Vector v = sample_probe(a.rows(), kind, rng);
    acc += dot(v, matvec(a, v));
  }
  return acc / k_probes;
}

}  // namespace fff
