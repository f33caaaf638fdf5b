#pragma once

#include <cstdint>

#include "longscape/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace longscape {

// Accumulating row-major matrix kernels, register-tiled 4 rows at a time with
// a bounded column tile so the hot loop runs out of registers/L1. Every C
// element is owned by exactly one row-tile iteration and accumulation orders
// are fixed, so results are deterministic for any thread count.

namespace mm_detail {

inline constexpr int64_t kColTile = 128;

// C[i0..i0+rows) x [j0..j0+cols) += op(A) rows * B[k x n] columns, where
// a_row(r, kk) yields op(A)[i0+r][kk].
template <typename T, typename ARow>
inline void tile_panel(ARow a_row, const T* b, T* c, int64_t rows, int64_t k, int64_t n,
                       int64_t j0, int64_t cols) {
  T acc[4][kColTile];
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < cols; ++j) acc[r][j] = T(0);
  for (int64_t kk = 0; kk < k; ++kk) {
    const T* brow = b + kk * n + j0;
    T av[4];
    for (int64_t r = 0; r < rows; ++r) av[r] = a_row(r, kk);
    if (rows == 4) {
      for (int64_t j = 0; j < cols; ++j) {
        const T bv = brow[j];
        acc[0][j] += av[0] * bv;
        acc[1][j] += av[1] * bv;
        acc[2][j] += av[2] * bv;
        acc[3][j] += av[3] * bv;
      }
    } else {
      for (int64_t r = 0; r < rows; ++r) {
        const T a = av[r];
        if (a == T(0)) continue;
        for (int64_t j = 0; j < cols; ++j) acc[r][j] += a * brow[j];
      }
    }
  }
  for (int64_t r = 0; r < rows; ++r) {
    T* crow = c + r * n + j0;
    for (int64_t j = 0; j < cols; ++j) crow[j] += acc[r][j];
  }
}

}  // namespace mm_detail

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  const int64_t tiles = (m + 3) / 4;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernel_threads()) if (tiles > 1)
#endif
  for (int64_t t = 0; t < tiles; ++t) {
    const int64_t i0 = 4 * t;
    const int64_t rows = m - i0 < 4 ? m - i0 : 4;
    for (int64_t j0 = 0; j0 < n; j0 += mm_detail::kColTile) {
      const int64_t cols = n - j0 < mm_detail::kColTile ? n - j0 : mm_detail::kColTile;
      mm_detail::tile_panel([a, i0, k](int64_t r, int64_t kk) { return a[(i0 + r) * k + kk]; },
                            b, c + i0 * n, rows, k, n, j0, cols);
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  const int64_t tiles = (m + 3) / 4;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernel_threads()) if (tiles > 1)
#endif
  for (int64_t t = 0; t < tiles; ++t) {
    const int64_t i0 = 4 * t;
    const int64_t rows = m - i0 < 4 ? m - i0 : 4;
    for (int64_t j0 = 0; j0 < n; j0 += mm_detail::kColTile) {
      const int64_t cols = n - j0 < mm_detail::kColTile ? n - j0 : mm_detail::kColTile;
      mm_detail::tile_panel([a, i0, m](int64_t r, int64_t kk) { return a[kk * m + i0 + r]; },
                            b, c + i0 * n, rows, k, n, j0, cols);
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T : 4x4 dot tiles over the contiguous k axis.
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  const int64_t tiles = (m + 3) / 4;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernel_threads()) if (tiles > 1)
#endif
  for (int64_t t = 0; t < tiles; ++t) {
    const int64_t i0 = 4 * t;
    const int64_t rows = m - i0 < 4 ? m - i0 : 4;
    for (int64_t j0 = 0; j0 < n; j0 += 4) {
      const int64_t cols = n - j0 < 4 ? n - j0 : 4;
      T acc[4][4] = {};
      for (int64_t kk = 0; kk < k; ++kk) {
        T bv[4];
        for (int64_t cj = 0; cj < cols; ++cj) bv[cj] = b[(j0 + cj) * k + kk];
        for (int64_t r = 0; r < rows; ++r) {
          const T av = a[(i0 + r) * k + kk];
          for (int64_t cj = 0; cj < cols; ++cj) acc[r][cj] += av * bv[cj];
        }
      }
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t cj = 0; cj < cols; ++cj) c[(i0 + r) * n + j0 + cj] += acc[r][cj];
    }
  }
}

// C[m,n] += A[k,m]^T * B[n,k]^T
template <typename T>
void mm_tt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernel_threads()) if (m > 4)
#endif
  for (int64_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (int64_t kk = 0; kk < k; ++kk) acc += a[kk * m + i] * b[j * k + kk];
      ci[j] += acc;
    }
  }
}

}  // namespace longscape
