// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace rway::kernels {

/// C (m x n) = A (m x k) * B (k x n), or C += A * B when accumulate is set.
///
/// Every output element is summed over k in increasing order starting from
/// zero, independent of m, n and of the tile an element lands in. Outputs for
/// a row of A therefore do not depend on how many other rows are present.
void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

/// Out (cols x rows) = transpose of In (rows x cols).
void transpose(std::size_t rows, std::size_t cols, std::span<const double> in,
               std::span<double> out);

}  // namespace rway::kernels
