// SPDX-License-Identifier: Apache-2.0
#include "rway/train.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "rway/error.hpp"
#include "rway/ops.hpp"
#include "rway/rng.hpp"

namespace rway {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (seq_len < 1) throw ConfigError("seq_len must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("warmup_frac outside [0, 1]");
  if (!(min_lr_frac >= 0.0 && min_lr_frac <= 1.0)) throw ConfigError("min_lr_frac outside [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction outside (0, 1)");
  if (eval_windows < 1) throw ConfigError("eval_windows must be at least 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"seq_len", c.seq_len},
                     {"lr", c.lr},
                     {"warmup_frac", c.warmup_frac},
                     {"min_lr_frac", c.min_lr_frac},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"clip_norm", c.clip_norm},
                     {"val_fraction", c.val_fraction},
                     {"eval_every", c.eval_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"eval_windows", c.eval_windows},
                     {"data_seed", c.data_seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const nlohmann::json defaults = TrainConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown train config field '" + key + "'");
  }
  try {
    TrainConfig out;
    out.steps = j.value("steps", out.steps);
    out.batch_size = j.value("batch_size", out.batch_size);
    out.seq_len = j.value("seq_len", out.seq_len);
    out.lr = j.value("lr", out.lr);
    out.warmup_frac = j.value("warmup_frac", out.warmup_frac);
    out.min_lr_frac = j.value("min_lr_frac", out.min_lr_frac);
    out.beta1 = j.value("beta1", out.beta1);
    out.beta2 = j.value("beta2", out.beta2);
    out.adam_eps = j.value("adam_eps", out.adam_eps);
    out.weight_decay = j.value("weight_decay", out.weight_decay);
    out.clip_norm = j.value("clip_norm", out.clip_norm);
    out.val_fraction = j.value("val_fraction", out.val_fraction);
    out.eval_every = j.value("eval_every", out.eval_every);
    out.checkpoint_every = j.value("checkpoint_every", out.checkpoint_every);
    out.eval_windows = j.value("eval_windows", out.eval_windows);
    out.data_seed = j.value("data_seed", out.data_seed);
    c = out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  const auto total = static_cast<double>(cfg.steps);
  const double warmup = std::max(1.0, std::round(cfg.warmup_frac * total));
  const auto s = static_cast<double>(step);
  if (s < warmup) return cfg.lr * (s + 1.0) / warmup;
  const double span = std::max(1.0, total - warmup);
  const double progress = std::min(1.0, (s - warmup) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.lr * (cfg.min_lr_frac + (1.0 - cfg.min_lr_frac) * cosine);
}

TrainState::TrainState(Model m, TrainConfig c) : model(std::move(m)), config(std::move(c)) {
  config.validate();
  for (const auto& p : model.parameters()) {
    adam_m.push_back(Tensor::zeros(p.tensor.shape()));
    adam_v.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

namespace {

std::string diagnostics(const TrainState& state, const std::string& what) {
  std::ostringstream os;
  os << "training diverged at step " << state.step << ": " << what << "\n";
  for (const auto& p : state.model.parameters()) {
    double norm = 0.0, gnorm = 0.0;
    bool finite = true;
    for (double x : p.tensor.data()) {
      norm += x * x;
      finite = finite && std::isfinite(x);
    }
    for (double g : p.tensor.grad_data()) gnorm += g * g;
    os << "  " << p.name << " |w|=" << std::sqrt(norm) << " |g|=" << std::sqrt(gnorm)
       << (finite ? "" : " non-finite") << "\n";
  }
  if (!state.loss_history.empty()) os << "  last loss " << state.loss_history.back() << "\n";
  return os.str();
}

}  // namespace

StepResult train_step(TrainState& state, const TokenBatch& batch, double lr) {
  if (batch.empty()) throw InputError("empty training batch");
  const auto& mcfg = state.model.config();
  const auto params = state.model.parameters();
  if (params.size() != state.adam_m.size()) {
    throw ContractError("optimizer state does not match model parameters");
  }
  state.model.zero_grad();

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  try {
    for (const auto& row : batch) {
      if (row.size() < 2) throw InputError("batch rows need at least two tokens");
      const std::size_t n = row.size() - 1;
      if (n > mcfg.max_seq_len) {
        throw InputError("training sequence of " + std::to_string(n) +
                         " tokens exceeds max_seq_len " + std::to_string(mcfg.max_seq_len));
      }
      const std::span<const std::size_t> tokens(row);
      const auto result = state.model.forward(tokens.first(n));
      const Tensor ce = cross_entropy(result.logits, tokens.subspan(1));
      loss += ce.item() * inv_batch;
      affine(ce, inv_batch).backward();
    }
  } catch (const NumericError& e) {
    state.model.zero_grad();
    throw TrainingError(diagnostics(state, e.what()));
  }

  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad_data()) sq += g * g;
  }
  const double grad_norm = std::sqrt(sq);
  if (!std::isfinite(loss) || !std::isfinite(grad_norm)) {
    const std::string msg = diagnostics(state, "loss " + std::to_string(loss) + ", grad norm " +
                                                   std::to_string(grad_norm));
    state.model.zero_grad();
    throw TrainingError(msg);
  }

  const auto& cfg = state.config;
  const double clip =
      (cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm) ? cfg.clip_norm / grad_norm : 1.0;
  const auto t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor w = params[k].tensor;
    auto data = w.mutable_data();
    const auto grad = w.grad_data();
    auto m = state.adam_m[k].mutable_data();
    auto v = state.adam_v[k].mutable_data();
    if (grad.empty()) continue;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i] * clip;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
      data[i] -= lr * (update + cfg.weight_decay * data[i]);
    }
  }
  state.model.zero_grad();
  ++state.step;
  state.loss_history.push_back(loss);
  return {loss, grad_norm, lr};
}

TokenBatch sample_batch(std::span<const std::size_t> tokens, const TrainConfig& cfg,
                        std::size_t step) {
  const std::size_t width = cfg.seq_len + 1;
  if (tokens.size() < width) {
    throw InputError("training data has " + std::to_string(tokens.size()) +
                     " tokens, fewer than one window of " + std::to_string(width));
  }
  Rng rng = Rng(cfg.data_seed).split("batches").split(static_cast<std::uint64_t>(step));
  TokenBatch batch(cfg.batch_size);
  for (auto& row : batch) {
    const std::size_t start = rng.uniform_int(tokens.size() - width + 1);
    row.assign(tokens.begin() + static_cast<std::ptrdiff_t>(start),
               tokens.begin() + static_cast<std::ptrdiff_t>(start + width));
  }
  return batch;
}

void train_until(TrainState& state, std::span<const std::size_t> train_tokens, std::size_t until,
                 const StepCallback& on_step) {
  while (state.step < until) {
    const TokenBatch batch = sample_batch(train_tokens, state.config, state.step);
    const StepResult res = train_step(state, batch, learning_rate(state.config, state.step));
    if (on_step) on_step(state, res);
  }
}

}  // namespace rway
