// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rway/model.hpp"

namespace rway {

/// Next-token loss over disjoint windows of seq_len + 1 tokens.
struct EvalRecord {
  std::size_t seq_len = 0;
  std::size_t windows = 0;
  double loss = 0.0;        // nats per token
  double perplexity = 0.0;  // exp(loss)
  std::vector<double> position_losses;  // mean loss at each predicted position
};

/// Uses the first min(max_windows, available) windows of the stream, so the
/// result depends only on (model, tokens, seq_len, max_windows). Throws
/// InputError when the stream is shorter than one window.
EvalRecord evaluate_loss(const Model& model, std::span<const std::size_t> tokens,
                         std::size_t seq_len, std::size_t max_windows);

/// One record per evaluation length, same windows budget for each.
std::vector<EvalRecord> extrapolation_sweep(const Model& model,
                                            std::span<const std::size_t> tokens,
                                            std::span<const std::size_t> eval_lens,
                                            std::size_t max_windows);

}  // namespace rway
