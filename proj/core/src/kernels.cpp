// SPDX-License-Identifier: Apache-2.0
#include "kernels.hpp"

#include <algorithm>

namespace rway::kernels {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 16;

// Full 4 x 16 tile; accumulators stay in registers across the k loop.
inline void tile_full(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                      bool accumulate) {
  double acc[kRowBlock][kColBlock] = {};
  const double* a0 = a;
  const double* a1 = a + k;
  const double* a2 = a + 2 * k;
  const double* a3 = a + 3 * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    const double x0 = a0[p];
    const double x1 = a1[p];
    const double x2 = a2[p];
    const double x3 = a3[p];
    for (std::size_t j = 0; j < kColBlock; ++j) {
      const double bv = brow[j];
      acc[0][j] += x0 * bv;
      acc[1][j] += x1 * bv;
      acc[2][j] += x2 * bv;
      acc[3][j] += x3 * bv;
    }
  }
  for (std::size_t r = 0; r < kRowBlock; ++r) {
    double* crow = c + r * n;
    for (std::size_t j = 0; j < kColBlock; ++j) {
      crow[j] = accumulate ? crow[j] + acc[r][j] : acc[r][j];
    }
  }
}

inline void tile_partial(std::size_t rows, std::size_t cols, std::size_t n, std::size_t k,
                         const double* a, const double* b, double* c, bool accumulate) {
  double acc[kRowBlock][kColBlock] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t r = 0; r < rows; ++r) {
      const double x = a[r * k + p];
      for (std::size_t j = 0; j < cols; ++j) {
        acc[r][j] += x * brow[j];
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + r * n;
    for (std::size_t j = 0; j < cols; ++j) {
      crow[j] = accumulate ? crow[j] + acc[r][j] : acc[r][j];
    }
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const std::size_t rows = std::min(kRowBlock, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
      const std::size_t cols = std::min(kColBlock, n - j0);
      const double* at = ap + i0 * k;
      const double* bt = bp + j0;
      double* ct = cp + i0 * n + j0;
      if (rows == kRowBlock && cols == kColBlock) {
        tile_full(n, k, at, bt, ct, accumulate);
      } else {
        tile_partial(rows, cols, n, k, at, bt, ct, accumulate);
      }
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, std::span<const double> in,
               std::span<double> out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    const std::size_t i1 = std::min(rows, i0 + kBlock);
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) {
          out[j * rows + i] = in[i * cols + j];
        }
      }
    }
  }
}

}  // namespace rway::kernels
