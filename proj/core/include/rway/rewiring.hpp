// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>

#include "rway/attention.hpp"
#include "rway/tensor.hpp"

namespace rway {

enum class RewiringKind { dot, bilinear };

/// What the runway coefficients are computed from. The default re-purposes
/// the value vectors of the last attention head. `hidden` scores the block
/// input rows directly (dot kind only) and is kept as an experimental toggle.
enum class RunwaySource { last_head_values, hidden };

struct RewiringMode {
  RewiringKind kind = RewiringKind::dot;
  /// head_dim x head_dim compatibility matrix; present iff kind == bilinear.
  Tensor bilinear;
  RunwaySource source = RunwaySource::last_head_values;

  /// Throws ConfigError if the bilinear matrix is missing, unexpected, or the
  /// wrong size for `dim`.
  void validate(std::size_t dim) const;
};

/// Runway coefficients, soft-rewired weights and the factors between them.
///
/// r:       (n, n) sigmoid compatibilities; only entries with j <= i-2 matter
/// beta:    (n, n) down-scale factors, 1 - r on eligible edges, exactly 1 elsewhere
/// e_tilde: (heads, n, n) softmax weights scaled by beta
/// e_hat:   (heads, n, n) e_tilde renormalised to unit row sums
struct RewiringRecord {
  Tensor r;
  Tensor beta;
  Tensor e_tilde;
  Tensor e_hat;
};

/// Edge (i, j) is down-scaled iff j <= i - 2 and j != 0; self, previous and
/// first-token edges are always kept.
constexpr bool is_eligible_edge(std::size_t i, std::size_t j) noexcept {
  return j + 2 <= i && j != 0;
}

/// 0/1 matrix of eligible edges for a length-n sequence.
Tensor eligible_edges(std::size_t n);

/// r[i, m] = sigmoid(v_{i-1} . v_m / sqrt(dim)), or with v_{i-1}^T B v_m for
/// the bilinear kind. Row 0 uses v_0 as its predecessor; it has no eligible
/// edges so the value is never read.
Tensor runway_coefficients(const Tensor& v_last, const RewiringMode& mode);

/// beta = 1 - r on eligible edges, exactly 1 elsewhere.
Tensor down_scale_factors(const Tensor& r);

/// Scales every row of e (rows x n) by the beta row (row mod n) and
/// renormalises it. Rows without eligible edges are passed through untouched,
/// so they stay bit-identical to the input.
Tensor rewire_rows(const Tensor& e, const Tensor& beta);

/// Applies one shared set of runway coefficients to softmax weights of every
/// head. e is (heads, n, n) or (n, n).
RewiringRecord rewire(const Tensor& e, const Tensor& r);

struct RewiredAttentionOutput {
  Tensor out;
  std::optional<AttentionRecord> attention;
  std::optional<RewiringRecord> rewiring;
};

/// Causal attention whose mixing weights are soft-rewired by runway
/// coefficients computed from the last head's values. The last head still
/// takes part in ordinary multi-head attention.
RewiredAttentionOutput rewired_attention(const Tensor& h, const AttentionWeights& weights,
                                         const AttentionConfig& cfg, const RewiringMode& mode,
                                         const AttentionOptions& options = {});

}  // namespace rway
