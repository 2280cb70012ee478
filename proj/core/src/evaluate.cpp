// SPDX-License-Identifier: Apache-2.0
#include "rway/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rway/error.hpp"
#include "rway/parallel.hpp"

namespace rway {

namespace {

/// Per-position negative log likelihood of targets under logits.
std::vector<double> token_losses(const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  const auto z = logits.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * v;
    const double zmax = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - zmax);
    out[i] = zmax + std::log(s) - row[targets[i]];
  }
  return out;
}

}  // namespace

EvalRecord evaluate_loss(const Model& model, std::span<const std::size_t> tokens,
                         std::size_t seq_len, std::size_t max_windows) {
  if (seq_len == 0) throw ConfigError("evaluation length must be positive");
  const std::size_t width = seq_len + 1;
  const std::size_t windows = std::min(max_windows, tokens.size() / width);
  if (windows == 0) {
    throw InputError("evaluation data has " + std::to_string(tokens.size()) +
                     " tokens, fewer than one window of " + std::to_string(width));
  }
  std::vector<std::vector<double>> per_window(windows);
  parallel_for(windows, [&](std::size_t w) {
    NoGradGuard no_grad;
    const auto window = tokens.subspan(w * width, width);
    const auto res = model.forward(window.first(seq_len));
    per_window[w] = token_losses(res.logits, window.subspan(1));
  });

  EvalRecord rec;
  rec.seq_len = seq_len;
  rec.windows = windows;
  rec.position_losses.assign(seq_len, 0.0);
  double total = 0.0;
  for (const auto& losses : per_window) {
    for (std::size_t i = 0; i < seq_len; ++i) {
      rec.position_losses[i] += losses[i];
      total += losses[i];
    }
  }
  for (auto& x : rec.position_losses) x /= static_cast<double>(windows);
  rec.loss = total / static_cast<double>(windows * seq_len);
  rec.perplexity = std::exp(rec.loss);
  return rec;
}

std::vector<EvalRecord> extrapolation_sweep(const Model& model,
                                            std::span<const std::size_t> tokens,
                                            std::span<const std::size_t> eval_lens,
                                            std::size_t max_windows) {
  std::vector<EvalRecord> out;
  for (auto len : eval_lens) out.push_back(evaluate_loss(model, tokens, len, max_windows));
  return out;
}

}  // namespace rway
