// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <algorithm>
#include <vector>

#include "rway/model.hpp"
#include "rway/ops.hpp"
#include "rway/rng.hpp"
#include "rway/tensor.hpp"

namespace rway::fixture {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng, stddev);
}

inline Tensor param(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Tensor t = random_tensor(std::move(shape), seed, stddev);
  t.requires_grad_();
  return t;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rway_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Plain triple-loop product, independent of the library kernels.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

/// Next-token loss of one row: predicts tokens[1..] from tokens[..n-1].
inline Tensor row_loss(const Model& model, const std::vector<std::size_t>& row) {
  const std::span<const std::size_t> all(row);
  return cross_entropy(model.forward(all.first(row.size() - 1)).logits, all.subspan(1));
}

/// Small configuration with two heads and two layers for fast exhaustive checks.
inline ModelConfig tiny_config(AttentionKind kind, std::uint64_t seed = 0) {
  ModelConfig cfg = ModelConfig::from_scale(1, kind, 11, 16);
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.init_std = 0.4;
  cfg.bilinear_init_std = 0.3;
  cfg.seed = seed;
  return cfg;
}

/// Worst relative error between tape gradients and central differences over
/// every scalar of every parameter.
inline double model_gradient_error(Model& model, const std::vector<std::size_t>& row,
                                   double floor = 1e-5, double step = 1e-5) {
  model.zero_grad();
  row_loss(model, row).backward();
  double worst = 0.0;
  for (auto& p : model.parameters()) {
    Tensor t = p.tensor;
    const Tensor tape = t.grad();
    std::vector<double> fd(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double x0 = data[i];
      NoGradGuard guard;
      data[i] = x0 + step;
      const double up = row_loss(model, row).item();
      data[i] = x0 - step;
      const double down = row_loss(model, row).item();
      data[i] = x0;
      fd[i] = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(fd[i]), std::abs(tape.data()[i]), floor});
      worst = std::max(worst, std::abs(fd[i] - tape.data()[i]) / denom);
    }
  }
  return worst;
}

}  // namespace rway::fixture
