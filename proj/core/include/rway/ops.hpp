// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rway/tensor.hpp"

namespace rway {

/// Boolean matrix selecting which entries of a row take part in a softmax.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> keep;  // row-major, 1 = unmasked

  static Mask all(std::size_t rows, std::size_t cols);
  /// Lower-triangular support: entry (i, j) kept iff j <= i.
  static Mask causal(std::size_t n);

  bool operator()(std::size_t i, std::size_t j) const { return keep[i * cols + j] != 0; }
};

// Differentiable ops. Each registers itself on the tape when an input
// requires grad. Shapes are checked and mismatches raise DimensionError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (m x n) + bias (n) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// scale * a + shift, elementwise.
Tensor affine(const Tensor& a, double scale, double shift = 0.0);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Row softmax over unmasked entries; masked outputs are exactly 0.
/// A row with no unmasked entry raises ContractError.
Tensor softmax_rows(const Tensor& x, const Mask& mask);
Tensor softmax_rows(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Rows of table selected by index (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// Rotary position embedding on x (n x dim): the pair (c, c + dim/2) of row i
/// is rotated by positions[i] * theta^(-2c/dim).
Tensor rotary(const Tensor& x, std::span<const std::size_t> positions, double theta);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width);
Tensor concat_cols(std::span<const Tensor> parts);

/// Mean next-token negative log likelihood of logits (n x vocab).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace rway
