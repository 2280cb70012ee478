// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rway/model.hpp"
#include "rway/tensor.hpp"

namespace rway {

/// Optimisation and schedule settings. Adam without bias-free shortcuts;
/// linear warmup over warmup_frac of the steps, then cosine decay to
/// min_lr_frac * lr.
struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  std::size_t seq_len = 128;
  double lr = 3e-3;
  double warmup_frac = 0.01;
  double min_lr_frac = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double val_fraction = 0.1;
  std::size_t eval_every = 0;        // 0: only at the end
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t eval_windows = 16;
  std::uint64_t data_seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// Learning rate used at a given (0-based) step.
double learning_rate(const TrainConfig& cfg, std::size_t step);

struct TrainState {
  Model model;
  TrainConfig config;
  std::vector<Tensor> adam_m;  // parallel to model.parameters()
  std::vector<Tensor> adam_v;
  std::size_t step = 0;
  std::vector<double> loss_history;

  TrainState(Model model, TrainConfig config);
};

/// Rows of a batch hold seq + 1 tokens; each row contributes seq next-token
/// predictions. seq must not exceed the model's max_seq_len.
using TokenBatch = std::vector<std::vector<std::size_t>>;

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

/// One Adam step on the mean cross-entropy of the batch. Throws
/// TrainingError with a diagnostic summary when the loss or gradients stop
/// being finite; the state is left untouched in that case.
StepResult train_step(TrainState& state, const TokenBatch& batch, double lr);

/// Deterministic batch for a step: windows drawn from a stream keyed by
/// (data_seed, step), so a resumed run sees the same data.
TokenBatch sample_batch(std::span<const std::size_t> tokens, const TrainConfig& cfg,
                        std::size_t step);

using StepCallback = std::function<void(const TrainState&, const StepResult&)>;

/// Runs steps state.step .. until-1 with scheduled learning rates.
void train_until(TrainState& state, std::span<const std::size_t> train_tokens, std::size_t until,
                 const StepCallback& on_step = {});

}  // namespace rway
