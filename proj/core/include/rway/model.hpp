// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rway/attention.hpp"
#include "rway/rewiring.hpp"
#include "rway/tensor.hpp"

namespace rway {

enum class AttentionKind { standard, rewired_dot, rewired_bilinear };

std::string_view to_string(AttentionKind kind) noexcept;
/// Accepts "standard", "rewired_dot"/"rewired-dot", "rewired_bilinear"/"rewired-bilinear".
AttentionKind parse_attention_kind(std::string_view text);

/// Architecture hyperparameters.
///
/// The scale rule sets d_model = 64 d with d heads and d layers (head_dim 64).
/// Individual fields may be overridden for toy models; follows_scale_rule()
/// reports whether a config still matches the rule.
struct ModelConfig {
  std::size_t d = 1;
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t d_model = 64;
  double mlp_ratio = 4.0;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 128;
  AttentionKind attention_kind = AttentionKind::standard;
  bool tie_embeddings = true;
  double rope_theta = 10000.0;
  double init_std = 0.02;
  double bilinear_init_std = 0.02;
  double ln_eps = 1e-5;
  RunwaySource runway_source = RunwaySource::last_head_values;
  std::uint64_t seed = 0;

  static ModelConfig from_scale(std::size_t d, AttentionKind kind = AttentionKind::standard,
                                std::size_t vocab_size = 256, std::size_t max_seq_len = 128);

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mlp_hidden() const;
  bool rewired() const { return attention_kind != AttentionKind::standard; }
  bool follows_scale_rule() const;
  AttentionConfig attention() const { return {n_heads, d_model, rope_theta}; }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
/// Missing fields fall back to from_scale(d); unknown fields are rejected.
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Exact parameter count implied by a config.
std::size_t count_params(const ModelConfig& cfg);

struct LayerParams {
  Tensor ln1_g, ln1_b;
  AttentionWeights attn;
  Tensor bilinear;  // head_dim x head_dim, rewired_bilinear only
  Tensor ln2_g, ln2_b;
  Tensor w_fc, b_fc;
  Tensor w_proj, b_proj;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct LayerRecord {
  AttentionRecord attention;
  std::optional<RewiringRecord> rewiring;

  /// Effective mixing weights (heads, n, n): e_hat when rewired, else A.
  const Tensor& mixing() const { return rewiring ? rewiring->e_hat : attention.weights_A; }
};

struct ForwardOptions {
  bool record = false;
  /// Attention weights act as constants for differentiation.
  bool detach_attention = false;
};

struct ForwardResult {
  Tensor logits;  // (n, vocab)
  std::vector<LayerRecord> records;
};

/// Pre-LN decoder-only transformer:
///   x <- x + Attn(LN1(x));  x <- x + MLP(LN2(x));  logits = LN_f(x) E^T
/// with RoPE inside attention and, when configured, runway-aware rewiring.
class Model {
 public:
  /// Deterministic initialisation from cfg.seed. Every tensor draws from its
  /// own labelled stream, so adding a tensor never perturbs the others.
  explicit Model(ModelConfig cfg);
  /// Copies own their weights; gradients are not copied.
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }

  /// All trainable tensors in canonical order.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Marks every parameter as (not) taking part in the tape.
  void set_trainable(bool flag);

  /// Throws InputError for token ids outside the vocabulary.
  ForwardResult forward(std::span<const std::size_t> tokens,
                        const ForwardOptions& options = {}) const;

  Tensor embed(std::span<const std::size_t> tokens) const;
  /// Residual stream after layers [first, last).
  Tensor run_layers(const Tensor& h, std::size_t first, std::size_t last,
                    const ForwardOptions& options = {},
                    std::vector<LayerRecord>* records = nullptr) const;
  Tensor layer_forward(std::size_t layer, const Tensor& h, const ForwardOptions& options = {},
                       LayerRecord* record = nullptr) const;
  /// First half of a layer: h + Attn(LN1(h)).
  Tensor attention_residual(std::size_t layer, const Tensor& h, const ForwardOptions& options = {},
                            LayerRecord* record = nullptr) const;
  /// Final LayerNorm and LM head.
  Tensor lm_head(const Tensor& h) const;

  /// Update map of a layer: u + MLP(LN2(u)), applied rowwise.
  Tensor update_map(std::size_t layer, const Tensor& u) const;
  /// Per-token message of a single-head layer: (LN1(h) W_V + b_V) W_O + b_O.
  Tensor message_map(std::size_t layer, const Tensor& h) const;

  const LayerParams& layer(std::size_t i) const { return layers_.at(i); }
  const Tensor& token_embedding() const noexcept { return tok_emb_; }

  /// Same weights viewed with a different attention kind. Moving to the
  /// bilinear kind draws a fresh compatibility matrix.
  Model with_attention_kind(AttentionKind kind) const;

 private:
  ModelConfig cfg_;
  Tensor tok_emb_;
  std::vector<LayerParams> layers_;
  Tensor lnf_g_, lnf_b_;
  Tensor lm_head_;  // untied only
};

}  // namespace rway
