// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Dense kernels used by the model. Every kernel comes in two flavours:
//
//   kernels::            4 x 16 register tiles, OpenMP-parallel over row
//                        tiles when called outside a parallel region and the
//                        problem is large enough.
//   kernels::reference:: plain serial triple loops; kept for tests and the
//                        benchmark.
//
// The parallel split never changes the arithmetic applied to an output
// element, so results are bit-identical for any thread count.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <type_traits>
#include <vector>

#include <omp.h>

#include "vibrodiag/matrix.hpp"

namespace vibrodiag::kernels {

inline constexpr std::size_t kLanes = 8;
inline constexpr std::size_t kParallelWork = std::size_t{1} << 18;

inline bool go_parallel(std::size_t work) {
  return work >= kParallelWork && !omp_in_parallel() && omp_get_max_threads() > 1;
}

/// Sum of a[i]*b[i] with a fixed 8-lane accumulation order.
template <typename T, typename U>
inline T dot(const T* a, const U* b, std::size_t n) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * static_cast<T>(b[i + l]);
  }
  T tail{};
  for (; i < n; ++i) tail += a[i] * static_cast<T>(b[i]);
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

/// y += alpha * x
template <typename T, typename U>
inline void axpy(T alpha, const U* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * static_cast<T>(x[i]);
}

namespace detail {

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(32)));
};

inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileCols = 16;

// c[r][j] (+)= sum_p a[r*ai + p*ap] * b[p*ldb + j] over a full 4 x 16 tile,
// summing p in increasing order.
template <typename T, bool kAcc>
inline void tile(const T* a, std::size_t ai, std::size_t ap, const T* b, std::size_t ldb, T* c,
                 std::size_t ldc, std::size_t kd) {
  using V = typename Vec<T>::type;
  constexpr std::size_t lanes = sizeof(V) / sizeof(T);
  constexpr std::size_t nv = kTileCols / lanes;
  V acc[kTileRows][nv] = {};
  for (std::size_t p = 0; p < kd; ++p) {
    V bv[nv];
    for (std::size_t v = 0; v < nv; ++v) std::memcpy(&bv[v], b + p * ldb + v * lanes, sizeof(V));
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const T s = a[r * ai + p * ap];
      for (std::size_t v = 0; v < nv; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r) {
    for (std::size_t v = 0; v < nv; ++v) {
      T* out = c + r * ldc + v * lanes;
      if constexpr (kAcc) {
        V cur;
        std::memcpy(&cur, out, sizeof(V));
        acc[r][v] += cur;
      }
      std::memcpy(out, &acc[r][v], sizeof(V));
    }
  }
}

template <typename T, bool kAcc>
inline void edge(const T* a, std::size_t ai, std::size_t ap, const T* b, std::size_t ldb, T* c,
                 std::size_t ldc, std::size_t kd, std::size_t mr, std::size_t nr) {
  for (std::size_t r = 0; r < mr; ++r) {
    for (std::size_t j = 0; j < nr; ++j) {
      T s{};
      for (std::size_t p = 0; p < kd; ++p) s += a[r * ai + p * ap] * b[p * ldb + j];
      if constexpr (kAcc) {
        c[r * ldc + j] += s;
      } else {
        c[r * ldc + j] = s;
      }
    }
  }
}

// c(m x n) (+)= A(m x kd) * b(kd x n), A addressed as a[i*ai + p*ap] so the
// same kernel serves A and A^T. Row tiles are the unit of parallel work.
template <typename T, bool kAcc>
void gemm(const T* a, std::size_t ai, std::size_t ap, const T* b, T* c, std::size_t m,
          std::size_t n, std::size_t kd) {
  const auto rows = [&](std::size_t i0) {
    const std::size_t mr = std::min(kTileRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
      const std::size_t nr = std::min(kTileCols, n - j0);
      if (mr == kTileRows && nr == kTileCols) {
        tile<T, kAcc>(a + i0 * ai, ai, ap, b + j0, n, c + i0 * n + j0, n, kd);
      } else {
        edge<T, kAcc>(a + i0 * ai, ai, ap, b + j0, n, c + i0 * n + j0, n, kd, mr, nr);
      }
    }
  };
  const std::size_t blocks = (m + kTileRows - 1) / kTileRows;
  if (go_parallel(m * n * kd)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(blocks); ++t) {
      rows(static_cast<std::size_t>(t) * kTileRows);
    }
  } else {
    for (std::size_t t = 0; t < blocks; ++t) rows(t * kTileRows);
  }
}

// Row-major copy of w (rows x cols), optionally transposed, converted to T.
template <typename T, typename U>
const T* staged(const U* w, std::size_t rows, std::size_t cols, bool transpose,
                std::vector<T>& buf) {
  if constexpr (std::is_same_v<T, U>) {
    if (!transpose) return w;
  }
  buf.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      buf[transpose ? c * rows + r : r * cols + c] = static_cast<T>(w[r * cols + c]);
    }
  }
  return buf.data();
}

}  // namespace detail

/// y(n x d) = x(n x k) * w(d x k)^T
template <typename T, typename U>
void matmul_nt(const T* x, const U* w, T* y, std::size_t n, std::size_t k, std::size_t d) {
  std::vector<T> buf;
  const T* wt = detail::staged<T>(w, d, k, true, buf);
  detail::gemm<T, false>(x, k, 1, wt, y, n, d, k);
}

/// y(n x d) = x(n x k) * wt(k x d)
template <typename T>
void matmul_nn(const T* x, const T* wt, T* y, std::size_t n, std::size_t k, std::size_t d) {
  detail::gemm<T, false>(x, k, 1, wt, y, n, d, k);
}

/// dx(n x k) += dy(n x d) * w(d x k)
template <typename T, typename U>
void matmul_nn_acc(const T* dy, const U* w, T* dx, std::size_t n, std::size_t d, std::size_t k) {
  std::vector<T> buf;
  const T* wm = detail::staged<T>(w, d, k, false, buf);
  detail::gemm<T, true>(dy, d, 1, wm, dx, n, k, d);
}

/// dw(d x k) += dy(n x d)^T * x(n x k)
template <typename T>
void matmul_tn_acc(const T* dy, const T* x, T* dw, std::size_t n, std::size_t d, std::size_t k) {
  detail::gemm<T, true>(dy, 1, d, x, dw, d, k, n);
}

template <typename T, typename U>
void matmul_nt(const Matrix<T>& x, const Matrix<U>& w, Matrix<T>& y) {
  y.resize(x.rows(), w.rows());
  matmul_nt(x.data(), w.data(), y.data(), x.rows(), x.cols(), w.rows());
}

namespace reference {

template <typename T, typename U>
void matmul_nt(const T* x, const U* w, T* y, std::size_t n, std::size_t k, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      T s{};
      for (std::size_t c = 0; c < k; ++c) s += x[i * k + c] * static_cast<T>(w[j * k + c]);
      y[i * d + j] = s;
    }
  }
}

template <typename T, typename U>
void matmul_nn_acc(const T* dy, const U* w, T* dx, std::size_t n, std::size_t d, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      T s{};
      for (std::size_t j = 0; j < d; ++j) s += dy[i * d + j] * static_cast<T>(w[j * k + c]);
      dx[i * k + c] += s;
    }
  }
}

template <typename T>
void matmul_tn_acc(const T* dy, const T* x, T* dw, std::size_t n, std::size_t d, std::size_t k) {
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t c = 0; c < k; ++c) {
      T s{};
      for (std::size_t i = 0; i < n; ++i) s += dy[i * d + j] * x[i * k + c];
      dw[j * k + c] += s;
    }
  }
}

}  // namespace reference
}  // namespace vibrodiag::kernels
