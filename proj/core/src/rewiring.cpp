// SPDX-License-Identifier: Apache-2.0
#include "rway/rewiring.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "rway/error.hpp"
#include "rway/ops.hpp"

namespace rway {

using detail::BackwardArgs;

void RewiringMode::validate(std::size_t dim) const {
  if (kind == RewiringKind::bilinear) {
    if (!bilinear.defined()) throw ConfigError("bilinear rewiring needs a compatibility matrix");
    if (bilinear.shape() != Shape{dim, dim}) {
      throw ConfigError("bilinear matrix " + shape_str(bilinear.shape()) + " for dimension " +
                        std::to_string(dim));
    }
    if (source == RunwaySource::hidden) {
      throw ConfigError("hidden-state runway source supports the dot kind only");
    }
  } else if (bilinear.defined()) {
    throw ConfigError("dot rewiring must not carry a bilinear matrix");
  }
}

Tensor eligible_edges(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = is_eligible_edge(i, j) ? 1.0 : 0.0;
  }
  return Tensor({n, n}, std::move(m));
}

Tensor runway_coefficients(const Tensor& v_last, const RewiringMode& mode) {
  if (v_last.rank() != 2) throw DimensionError("runway_coefficients: expected (n, dim) values");
  const std::size_t n = v_last.dim(0), dim = v_last.dim(1);
  if (n == 0) throw ContractError("runway_coefficients: empty sequence");
  mode.validate(dim);
  std::vector<std::size_t> prev(n);
  for (std::size_t i = 0; i < n; ++i) prev[i] = i == 0 ? 0 : i - 1;
  Tensor v_prev = gather_rows(v_last, prev);
  if (mode.kind == RewiringKind::bilinear) v_prev = matmul(v_prev, mode.bilinear);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  return sigmoid(affine(matmul(v_prev, transpose(v_last)), scale));
}

Tensor down_scale_factors(const Tensor& r) {
  if (r.rank() != 2 || r.dim(0) != r.dim(1)) {
    throw DimensionError("down_scale_factors: r must be square, got " + shape_str(r.shape()));
  }
  return affine(mul(r, eligible_edges(r.dim(0))), -1.0, 1.0);
}

Tensor rewire_rows(const Tensor& e, const Tensor& beta) {
  if (e.rank() != 2 || beta.rank() != 2) throw DimensionError("rewire_rows: rank-2 inputs");
  const std::size_t rows = e.dim(0), n = e.dim(1);
  if (beta.dim(0) != n || beta.dim(1) != n || rows % n != 0) {
    throw DimensionError("rewire_rows: weights " + shape_str(e.shape()) + " vs factors " +
                         shape_str(beta.shape()));
  }
  const auto w = e.data(), b = beta.data();
  std::vector<double> out(w.begin(), w.end());
  std::vector<double> row_sums(rows, 0.0);
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t i = row % n;
    if (i < 3) continue;  // no eligible edge before position 3
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[row * n + j] = w[row * n + j] * b[i * n + j];
      s += out[row * n + j];
    }
    if (!(s > 0.0)) {
      throw ContractError("rewire_rows: row " + std::to_string(row) + " lost all mass");
    }
    for (std::size_t j = 0; j < n; ++j) out[row * n + j] /= s;
    row_sums[row] = s;
  }
  return make_result(
      {rows, n}, std::move(out), {e, beta}, "rewire_rows",
      [e, beta, rows, n, row_sums = std::move(row_sums)](const BackwardArgs& g) {
        const auto w = e.data(), b = beta.data();
        double* ge = g.input_grads[0];
        double* gb = g.input_grads[1];
        for (std::size_t row = 0; row < rows; ++row) {
          const std::size_t i = row % n;
          const double* gy = g.grad.data() + row * n;
          if (i < 3) {
            if (ge) {
              for (std::size_t j = 0; j < n; ++j) ge[row * n + j] += gy[j];
            }
            continue;
          }
          const double* y = g.out.data() + row * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
          const double inv = 1.0 / row_sums[row];
          for (std::size_t j = 0; j < n; ++j) {
            const double dt = (gy[j] - dot) * inv;  // d loss / d (e * beta)
            if (ge) ge[row * n + j] += dt * b[i * n + j];
            if (gb) gb[i * n + j] += dt * w[row * n + j];
          }
        }
      });
}

RewiringRecord rewire(const Tensor& e, const Tensor& r) {
  const Tensor beta = down_scale_factors(r);
  const std::size_t n = r.dim(0);
  std::size_t heads = 1;
  if (e.rank() == 3) {
    heads = e.dim(0);
    if (e.dim(1) != n || e.dim(2) != n) throw DimensionError("rewire: weights/r mismatch");
  } else if (e.rank() != 2 || e.dim(0) != n || e.dim(1) != n) {
    throw DimensionError("rewire: weights " + shape_str(e.shape()) + " for r " +
                         shape_str(r.shape()));
  }
  const Tensor flat = e.reshape({heads * n, n});
  const Tensor e_hat = rewire_rows(flat, beta).reshape(e.shape());

  std::vector<double> scaled(flat.data().begin(), flat.data().end());
  const auto b = beta.data();
  for (std::size_t row = 0; row < heads * n; ++row) {
    for (std::size_t j = 0; j < n; ++j) scaled[row * n + j] *= b[(row % n) * n + j];
  }
  return RewiringRecord{r, beta, Tensor(e.shape(), std::move(scaled)), e_hat};
}

RewiredAttentionOutput rewired_attention(const Tensor& h, const AttentionWeights& weights,
                                         const AttentionConfig& cfg, const RewiringMode& mode,
                                         const AttentionOptions& options) {
  const detail::HeadPass pass = detail::attention_heads(h, weights, cfg);
  const std::size_t n = h.dim(0);

  Tensor r;
  if (mode.source == RunwaySource::hidden) {
    mode.validate(cfg.d_model);
    r = runway_coefficients(h, mode);
  } else {
    r = runway_coefficients(pass.values.back(), mode);
  }
  const Tensor beta = down_scale_factors(r);

  std::vector<Tensor> mixing;
  mixing.reserve(pass.weights.size());
  for (const auto& a : pass.weights) {
    Tensor e_hat = rewire_rows(a, beta);
    mixing.push_back(options.detach_weights ? e_hat.detach() : e_hat);
  }

  RewiredAttentionOutput result{detail::mix_heads(mixing, pass.values, weights), std::nullopt,
                                std::nullopt};
  if (options.record) {
    result.attention = detail::make_record(pass);
    const Tensor e = detail::stack(pass.weights);
    std::vector<double> scaled(e.data().begin(), e.data().end());
    const auto b = beta.data();
    for (std::size_t row = 0; row < pass.weights.size() * n; ++row) {
      for (std::size_t j = 0; j < n; ++j) scaled[row * n + j] *= b[(row % n) * n + j];
    }
    result.rewiring = RewiringRecord{r.detach(), beta.detach(), Tensor(e.shape(), std::move(scaled)),
                                     detail::stack(mixing)};
  }
  return result;
}

}  // namespace rway
