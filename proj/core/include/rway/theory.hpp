// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rway/attention.hpp"
#include "rway/model.hpp"
#include "rway/tensor.hpp"

namespace rway {

/// All indirect causal paths from source to destination.
struct RunwaySet {
  std::size_t source = 0;
  std::size_t destination = 0;
  std::vector<std::vector<std::size_t>> paths;  // strictly increasing, >= 2 edges
};

/// Exhaustive enumeration over the complete causal DAG on n positions.
/// Throws DomainError unless source <= destination < n.
RunwaySet enumerate_runway(std::size_t source, std::size_t destination, std::size_t n);

/// Closed form 2^(d-s-1) - 1 for d > s + 1, else 0.
std::size_t runway_count(std::size_t source, std::size_t destination);

/// Sensitivity of one token pair across `depth` layers.
struct SensitivityReport {
  std::size_t source = 0;
  std::size_t destination = 0;
  std::size_t first_layer = 0;
  std::size_t depth = 0;
  double measured_norm = 0.0;        // spectral norm of d h_dest / d h_src
  double bound_matrix_entry = 0.0;   // (prod (I + A))[dest, src]
  double lipschitz = 0.0;            // C
  double bound = 0.0;                // C^depth * entry
  bool satisfied = false;
  std::optional<double> full_gradient_norm;  // attention not detached; informational
};

struct SensitivityOptions {
  /// Also measure the Jacobian with gradients flowing through attention.
  bool full_gradient = false;
};

/// Checks every (source, destination) pair for layers
/// [first_layer, first_layer + depth) of a single-head model. Jacobians come
/// from the tape with attention weights detached; C is the largest of the
/// spectral norms of the update-map Jacobians and of their products with the
/// message-map Jacobians, taken at the realised activations.
/// Throws DomainError if the layer range does not fit the model.
std::vector<SensitivityReport> sensitivity_bound_sweep(const Model& model,
                                                       std::span<const std::size_t> tokens,
                                                       std::size_t first_layer, std::size_t depth,
                                                       const SensitivityOptions& options = {});

/// Single pair; depth is signed so that a negative value can be rejected
/// with DomainError.
SensitivityReport sensitivity_bound_check(const Model& model, std::span<const std::size_t> tokens,
                                          std::size_t source, std::size_t destination,
                                          std::size_t first_layer, long depth,
                                          const SensitivityOptions& options = {});

/// (I + A_last) P = P + A_last P split into the self path and the gated
/// runway terms through each neighbour w of the destination.
struct RunwaySplit {
  double self_term = 0.0;                // (P)[d, s]
  std::vector<double> gate_terms;        // A_last[d, w] * P[w, s], w = 0..d
  double full_entry = 0.0;               // (prod (I + A))[d, s]
  double recombination_error() const;
};

/// P is the product of (I + A) over the first depth - 1 layers, later
/// layers on the left. Throws DomainError for depth == 0 or too few layers.
RunwaySplit direct_runway_split(std::span<const Tensor> attention, std::size_t source,
                                std::size_t destination, std::size_t depth);

/// (I + A_{first+depth-1}) ... (I + A_first); identity for depth 0.
Tensor attention_path_product(std::span<const Tensor> attention, std::size_t first,
                              std::size_t depth);

/// delta = common + residual, with the residual mean-free over rows.
struct PerturbationDecomposition {
  Tensor common;    // (d_model)
  Tensor residual;  // (n, d_model)
};

PerturbationDecomposition split_perturbation(const Tensor& delta);

struct BlindspotResult {
  double weight_gap = 0.0;
  double bound = 0.0;               // sigma0 * P * |residual|
  double softmax_lipschitz = 0.5;   // sigma0
  double projection_factor = 0.0;   // P = |q| |W_K| / sqrt(d_k)
  double local_softmax_norm = 0.0;  // spectral norm of the softmax Jacobian at the clean logits
  bool satisfied = false;
};

/// Attention weights of a fixed query over keys before and after the keys
/// move by common + residual. Uses the raw single-head projections (no
/// LayerNorm, no RoPE).
BlindspotResult blindspot_check(const Tensor& keys, const Tensor& common, const Tensor& residual,
                                const Tensor& query, const AttentionWeights& weights);

/// | m(keys + common + residual) - common W_V - m(keys + residual) | for the
/// aggregated message m of a fixed query.
double cascade_check(const Tensor& keys, const Tensor& common, const Tensor& residual,
                     const Tensor& query, const AttentionWeights& weights);

/// The same residual for soft-rewired attention at the last position of the
/// sequence, with runway coefficients recomputed from the perturbed values.
/// Reported only: nothing guarantees it vanishes.
double cascade_check_rewired(const Tensor& tokens, const Tensor& common, const Tensor& residual,
                             const AttentionWeights& weights);

}  // namespace rway
