#pragma once
// Thin dense-math layer: batched matmuls (CBLAS when available) and the
// small factorizations used by the simulator and the hedging-ratio solve.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deepswitch/common.hpp"

#ifdef DEEPSWITCH_USE_CBLAS
#include <cblas.h>
#endif

namespace deepswitch {

// out[rows x n_out] = in[rows x n_in] * W^T, W stored row-major [n_out x n_in].
inline void matmul_wt(const double* in, const double* w, double* out,
                      int rows, int n_in, int n_out) {
#ifdef DEEPSWITCH_USE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, rows, n_out, n_in, 1.0,
              in, n_in, w, n_in, 0.0, out, n_out);
#else
  for (int r = 0; r < rows; ++r) {
    const double* x = in + static_cast<std::size_t>(r) * n_in;
    double* y = out + static_cast<std::size_t>(r) * n_out;
    for (int o = 0; o < n_out; ++o) {
      const double* wr = w + static_cast<std::size_t>(o) * n_in;
      double acc = 0.0;
      for (int i = 0; i < n_in; ++i) acc += x[i] * wr[i];
      y[o] = acc;
    }
  }
#endif
}

// dW[n_out x n_in] += cot[rows x n_out]^T * in[rows x n_in].
inline void matmul_grad_w(const double* cot, const double* in, double* dw,
                          int rows, int n_in, int n_out) {
#ifdef DEEPSWITCH_USE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, n_out, n_in, rows, 1.0,
              cot, n_out, in, n_in, 1.0, dw, n_in);
#else
  for (int r = 0; r < rows; ++r) {
    const double* c = cot + static_cast<std::size_t>(r) * n_out;
    const double* x = in + static_cast<std::size_t>(r) * n_in;
    for (int o = 0; o < n_out; ++o)
      for (int i = 0; i < n_in; ++i)
        dw[static_cast<std::size_t>(o) * n_in + i] += c[o] * x[i];
  }
#endif
}

// dIn[rows x n_in] = cot[rows x n_out] * W[n_out x n_in].
inline void matmul_grad_in(const double* cot, const double* w, double* din,
                           int rows, int n_in, int n_out) {
#ifdef DEEPSWITCH_USE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, rows, n_in, n_out, 1.0,
              cot, n_out, w, n_in, 0.0, din, n_in);
#else
  for (int r = 0; r < rows; ++r) {
    const double* c = cot + static_cast<std::size_t>(r) * n_out;
    double* y = din + static_cast<std::size_t>(r) * n_in;
    for (int i = 0; i < n_in; ++i) y[i] = 0.0;
    for (int o = 0; o < n_out; ++o)
      for (int i = 0; i < n_in; ++i)
        y[i] += c[o] * w[static_cast<std::size_t>(o) * n_in + i];
  }
#endif
}

// In-place lower Cholesky of a symmetric PSD matrix (row-major n x n).
// Tiny negative pivots from roundoff are clamped to zero; genuinely
// indefinite input throws.
inline void cholesky_lower(std::vector<double>& a, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<std::size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      double l = a[static_cast<std::size_t>(j) * n + k];
      d -= l * l;
    }
    if (d < 0.0) {
      if (d > -1e-10) d = 0.0;
      else throw numeric_error("cholesky_lower: matrix not positive semidefinite (pivot " +
                               std::to_string(d) + " at " + std::to_string(j) + ")");
    }
    double lj = std::sqrt(d);
    a[static_cast<std::size_t>(j) * n + j] = lj;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      a[static_cast<std::size_t>(i) * n + j] = (lj > 0.0) ? s / lj : 0.0;
    }
    for (int k = j + 1; k < n; ++k) a[static_cast<std::size_t>(j) * n + k] = 0.0;
  }
}

// Solves A x = b for small dense A (row-major, n x n) by LU with partial
// pivoting. A and b are clobbered; the solution lands in b.
inline void lu_solve(std::vector<double>& a, std::vector<double>& b, int n) {
  std::vector<int> piv(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) piv[i] = i;
  for (int col = 0; col < n; ++col) {
    int best = col;
    double mag = std::fabs(a[static_cast<std::size_t>(col) * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double m = std::fabs(a[static_cast<std::size_t>(r) * n + col]);
      if (m > mag) { mag = m; best = r; }
    }
    if (mag == 0.0)
      throw numeric_error("lu_solve: singular matrix at column " + std::to_string(col));
    if (best != col) {
      for (int k = 0; k < n; ++k)
        std::swap(a[static_cast<std::size_t>(col) * n + k], a[static_cast<std::size_t>(best) * n + k]);
      std::swap(b[col], b[best]);
    }
    double pivot = a[static_cast<std::size_t>(col) * n + col];
    for (int r = col + 1; r < n; ++r) {
      double f = a[static_cast<std::size_t>(r) * n + col] / pivot;
      a[static_cast<std::size_t>(r) * n + col] = 0.0;
      if (f == 0.0) continue;
      for (int k = col + 1; k < n; ++k)
        a[static_cast<std::size_t>(r) * n + k] -= f * a[static_cast<std::size_t>(col) * n + k];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < n; ++k) s -= a[static_cast<std::size_t>(r) * n + k] * b[k];
    b[r] = s / a[static_cast<std::size_t>(r) * n + r];
  }
}

}  // namespace deepswitch
