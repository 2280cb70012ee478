// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rway/tensor.hpp"

namespace rway {

struct AttentionConfig {
  std::size_t n_heads = 1;
  std::size_t d_model = 64;
  double rope_theta = 10000.0;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws ConfigError unless d_model divides evenly into an even head_dim.
  void validate() const;
};

/// Projection weights of one attention block. Matrices are d_model x d_model
/// and act on row vectors (h W); head k owns columns [k*head_dim, (k+1)*head_dim).
struct AttentionWeights {
  Tensor w_q, b_q;
  Tensor w_k, b_k;
  Tensor w_v, b_v;
  Tensor w_o, b_o;
};

/// Per-head view of one causal attention pass.
///
/// logits are the scaled scores q.k / sqrt(head_dim) for every (i, j); only
/// j <= i is used. weights_A is row-stochastic on the causal support and zero
/// above the diagonal. values_V holds the per-head value vectors.
struct AttentionRecord {
  Tensor logits;     // (heads, n, n)
  Tensor weights_A;  // (heads, n, n)
  Tensor values_V;   // (heads, n, head_dim)
};

struct AttentionOptions {
  /// Keep an AttentionRecord for this pass.
  bool record = false;
  /// Cut gradients through the mixing weights (A or its rewired form), so
  /// attention acts as a fixed linear operator on the values.
  bool detach_weights = false;
};

struct AttentionOutput {
  Tensor out;  // (n, d_model)
  std::optional<AttentionRecord> record;
};

/// Rotates queries and keys by their positions (rotary position embedding).
/// Throws ConfigError for an odd head dimension.
std::pair<Tensor, Tensor> apply_rope(const Tensor& q, const Tensor& k,
                                     std::span<const std::size_t> positions,
                                     double theta = 10000.0);

/// Multi-head causal self-attention with RoPE over h (n x d_model).
AttentionOutput causal_attention(const Tensor& h, const AttentionWeights& weights,
                                 const AttentionConfig& cfg, const AttentionOptions& options = {});

namespace detail {

/// Intermediate per-head tensors shared by the standard and rewired paths.
struct HeadPass {
  std::vector<Tensor> values;   // (n, head_dim) each
  std::vector<Tensor> logits;   // (n, n) each
  std::vector<Tensor> weights;  // (n, n) each, softmax over the causal mask
};

HeadPass attention_heads(const Tensor& h, const AttentionWeights& weights,
                         const AttentionConfig& cfg);

/// concat_k(mixing[k] @ values[k]) @ W_O + b_O
Tensor mix_heads(std::span<const Tensor> mixing, std::span<const Tensor> values,
                 const AttentionWeights& weights);

/// Stacks equally shaped 2-d tensors into (count, rows, cols); values only.
Tensor stack(std::span<const Tensor> parts);

AttentionRecord make_record(const HeadPass& pass);

}  // namespace detail

}  // namespace rway
