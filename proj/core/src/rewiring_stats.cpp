// SPDX-License-Identifier: Apache-2.0
#include "rway/rewiring_stats.hpp"

#include <cmath>
#include <string>

#include "rway/error.hpp"
#include "rway/parallel.hpp"
#include "rway/rewiring.hpp"

namespace rway {

namespace {

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++count;
  }
  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
  std::optional<double> stddev() const {
    if (count == 0) return std::nullopt;
    const double m = sum / static_cast<double>(count);
    return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - m * m));
  }
};

nlohmann::json optional_vector(const std::vector<std::optional<double>>& v) {
  auto out = nlohmann::json::array();
  for (const auto& x : v) out.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return out;
}

}  // namespace

RewiringStats analyze_rewiring(const Model& model, std::span<const std::size_t> tokens,
                               std::size_t seq_len, std::size_t n_batches) {
  if (!model.config().rewired()) {
    throw ConfigError("rewiring statistics need a rewired model, checkpoint is " +
                      std::string(to_string(model.config().attention_kind)));
  }
  if (seq_len == 0 || n_batches == 0) throw ConfigError("seq_len and n_batches must be positive");
  const std::size_t windows = std::min(n_batches, tokens.size() / seq_len);
  if (windows == 0) {
    throw InputError("rewiring analysis needs at least " + std::to_string(seq_len) + " tokens");
  }
  const std::size_t n = seq_len;
  std::vector<std::vector<Tensor>> betas(windows);
  parallel_for(windows, [&](std::size_t w) {
    NoGradGuard no_grad;
    const auto res = model.forward(tokens.subspan(w * n, n), {true, false});
    for (const auto& layer : res.records) betas[w].push_back(layer.rewiring->beta);
  });

  RewiringStats stats;
  stats.seq_len = n;
  stats.windows = windows;
  stats.layers = model.config().n_layers;
  std::vector<double> mean(n * n, 0.0);
  std::vector<Moments> by_source(n), by_destination(n);
  std::size_t samples = 0;
  for (const auto& per_layer : betas) {
    for (const auto& beta : per_layer) {
      ++samples;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const double b = beta(i, j);
          mean[i * n + j] += b;
          if (is_eligible_edge(i, j)) {
            by_source[j].add(b);
            by_destination[i].add(b);
          }
        }
      }
    }
  }
  for (auto& x : mean) x /= static_cast<double>(samples);
  stats.mean_beta = Tensor({n, n}, std::move(mean));
  for (std::size_t p = 0; p < n; ++p) {
    stats.source_mean.push_back(by_source[p].mean());
    stats.source_std.push_back(by_source[p].stddev());
    stats.destination_mean.push_back(by_destination[p].mean());
    stats.destination_std.push_back(by_destination[p].stddev());
  }
  stats.source_mean[0] = 1.0;
  stats.source_std[0] = 0.0;
  return stats;
}

nlohmann::json to_json(const RewiringStats& stats) {
  const std::size_t n = stats.seq_len;
  auto matrix = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = nlohmann::json::array();
    for (std::size_t j = 0; j < n; ++j) {
      row.push_back(j <= i ? nlohmann::json(stats.mean_beta(i, j)) : nlohmann::json(nullptr));
    }
    matrix.push_back(std::move(row));
  }
  return nlohmann::json{{"seq_len", n},
                        {"windows", stats.windows},
                        {"layers", stats.layers},
                        {"mean_beta_matrix", matrix},
                        {"per_source_mean", optional_vector(stats.source_mean)},
                        {"per_source_std", optional_vector(stats.source_std)},
                        {"per_destination_mean", optional_vector(stats.destination_mean)},
                        {"per_destination_std", optional_vector(stats.destination_std)}};
}

}  // namespace rway
