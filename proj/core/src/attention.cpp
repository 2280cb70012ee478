// SPDX-License-Identifier: Apache-2.0
#include "rway/attention.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "rway/error.hpp"
#include "rway/ops.hpp"

namespace rway {

void AttentionConfig::validate() const {
  if (n_heads == 0 || d_model == 0) throw ConfigError("attention: zero heads or width");
  if (d_model % n_heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("attention: head_dim " + std::to_string(head_dim()) +
                      " must be even for RoPE");
  }
  if (!(rope_theta > 0.0)) throw ConfigError("attention: rope_theta must be positive");
}

std::pair<Tensor, Tensor> apply_rope(const Tensor& q, const Tensor& k,
                                     std::span<const std::size_t> positions, double theta) {
  return {rotary(q, positions, theta), rotary(k, positions, theta)};
}

namespace detail {

HeadPass attention_heads(const Tensor& h, const AttentionWeights& weights,
                         const AttentionConfig& cfg) {
  cfg.validate();
  if (h.rank() != 2 || h.dim(1) != cfg.d_model) {
    throw DimensionError("attention: input " + shape_str(h.shape()) + " for d_model " +
                         std::to_string(cfg.d_model));
  }
  const std::size_t n = h.dim(0);
  if (n == 0) throw ContractError("attention: empty sequence");
  const std::size_t hd = cfg.head_dim();

  const Tensor q = add_row(matmul(h, weights.w_q), weights.b_q);
  const Tensor k = add_row(matmul(h, weights.w_k), weights.b_k);
  const Tensor v = add_row(matmul(h, weights.w_v), weights.b_v);

  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  const Mask mask = Mask::causal(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  HeadPass pass;
  for (std::size_t head = 0; head < cfg.n_heads; ++head) {
    auto [qh, kh] = apply_rope(slice_cols(q, head * hd, hd), slice_cols(k, head * hd, hd),
                               positions, cfg.rope_theta);
    Tensor logits = affine(matmul(qh, transpose(kh)), scale);
    pass.weights.push_back(softmax_rows(logits, mask));
    pass.logits.push_back(std::move(logits));
    pass.values.push_back(slice_cols(v, head * hd, hd));
  }
  return pass;
}

Tensor mix_heads(std::span<const Tensor> mixing, std::span<const Tensor> values,
                 const AttentionWeights& weights) {
  std::vector<Tensor> heads;
  heads.reserve(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) heads.push_back(matmul(mixing[k], values[k]));
  const Tensor joined = heads.size() == 1 ? heads[0] : concat_cols(heads);
  return add_row(matmul(joined, weights.w_o), weights.b_o);
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor();
  const Shape inner = parts[0].shape();
  std::vector<double> data;
  data.reserve(parts.size() * parts[0].numel());
  for (const auto& p : parts) {
    if (p.shape() != inner) throw DimensionError("stack: shapes differ");
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor(std::move(shape), std::move(data));
}

AttentionRecord make_record(const HeadPass& pass) {
  return AttentionRecord{stack(pass.logits), stack(pass.weights), stack(pass.values)};
}

}  // namespace detail

AttentionOutput causal_attention(const Tensor& h, const AttentionWeights& weights,
                                 const AttentionConfig& cfg, const AttentionOptions& options) {
  const detail::HeadPass pass = detail::attention_heads(h, weights, cfg);
  std::vector<Tensor> mixing;
  mixing.reserve(pass.weights.size());
  for (const auto& a : pass.weights) mixing.push_back(options.detach_weights ? a.detach() : a);
  AttentionOutput result{detail::mix_heads(mixing, pass.values, weights), std::nullopt};
  if (options.record) result.record = detail::make_record(pass);
  return result;
}

}  // namespace rway
