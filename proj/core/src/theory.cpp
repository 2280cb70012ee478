// SPDX-License-Identifier: Apache-2.0
#include "rway/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "rway/error.hpp"
#include "rway/ops.hpp"
#include "rway/rewiring.hpp"

namespace rway {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double spectral_norm(const Tensor& t) {
  Matrix m(t.dim(0), t.dim(1));
  std::copy(t.data().begin(), t.data().end(), m.data());
  return spectral_norm(m);
}

double l2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

/// Per-row Jacobians of a map that acts on every row independently.
std::vector<Matrix> rowwise_jacobians(const std::function<Tensor(const Tensor&)>& fn,
                                      const Tensor& x) {
  Tensor leaf = x.detach();
  leaf.requires_grad_();
  const Tensor out = fn(leaf);
  const std::size_t n = x.dim(0), in_dim = x.dim(1), out_dim = out.dim(1);
  std::vector<Matrix> jac(n, Matrix::Zero(out_dim, in_dim));
  for (std::size_t k = 0; k < out_dim; ++k) {
    std::vector<double> cot(n * out_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) cot[i * out_dim + k] = 1.0;
    leaf.zero_grad();
    out.backward(Tensor(out.shape(), std::move(cot)));
    const auto g = leaf.grad_data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < in_dim; ++c) jac[i](k, c) = g[i * in_dim + c];
    }
  }
  return jac;
}

/// Full Jacobian of rows of fn(x) w.r.t. rows of x, (n*out) x (n*in).
Matrix full_jacobian(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x) {
  Tensor leaf = x.detach();
  leaf.requires_grad_();
  const Tensor out = fn(leaf);
  const std::size_t rows = out.numel(), cols = x.numel();
  Matrix jac(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> cot(rows, 0.0);
    cot[r] = 1.0;
    leaf.zero_grad();
    out.backward(Tensor(out.shape(), std::move(cot)));
    const auto g = leaf.grad_data();
    if (g.empty()) {
      jac.row(static_cast<Eigen::Index>(r)).setZero();
    } else {
      std::copy(g.begin(), g.end(), jac.row(static_cast<Eigen::Index>(r)).data());
    }
  }
  return jac;
}

double block_norm(const Matrix& jac, std::size_t dst, std::size_t src, std::size_t width) {
  const auto w = static_cast<Eigen::Index>(width);
  return spectral_norm(jac.block(static_cast<Eigen::Index>(dst) * w,
                                 static_cast<Eigen::Index>(src) * w, w, w));
}

Tensor as_row(const Tensor& v) { return v.rank() == 1 ? v.reshape({1, v.dim(0)}) : v; }

Tensor add_common(const Tensor& x, const Tensor& common) {
  return add_row(x, common.reshape({common.numel()}));
}

}  // namespace

RunwaySet enumerate_runway(std::size_t source, std::size_t destination, std::size_t n) {
  if (source > destination || destination >= n) {
    throw DomainError("runway needs source <= destination < n, got s=" + std::to_string(source) +
                      " d=" + std::to_string(destination) + " n=" + std::to_string(n));
  }
  RunwaySet set{source, destination, {}};
  std::vector<std::size_t> path{source};
  std::function<void(std::size_t)> extend = [&](std::size_t at) {
    for (std::size_t next = at + 1; next <= destination; ++next) {
      path.push_back(next);
      if (next == destination) {
        if (path.size() >= 3) set.paths.push_back(path);
      } else {
        extend(next);
      }
      path.pop_back();
    }
  };
  if (destination > source) extend(source);
  return set;
}

std::size_t runway_count(std::size_t source, std::size_t destination) {
  if (destination <= source + 1) return 0;
  return (std::size_t{1} << (destination - source - 1)) - 1;
}

Tensor attention_path_product(std::span<const Tensor> attention, std::size_t first,
                              std::size_t depth) {
  if (first + depth > attention.size()) {
    throw DomainError("attention product over layers beyond the " +
                      std::to_string(attention.size()) + " supplied");
  }
  if (attention.empty()) throw DomainError("attention product needs at least one matrix");
  const std::size_t n = attention.front().dim(0);
  Matrix prod = Matrix::Identity(n, n);
  for (std::size_t t = first; t < first + depth; ++t) {
    const Tensor& a = attention[t];
    if (a.shape() != Shape{n, n}) throw DimensionError("attention matrices must be n x n");
    Matrix step = Matrix::Identity(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) step(i, j) += a(i, j);
    }
    prod = (step * prod).eval();
  }
  return Tensor({n, n}, std::vector<double>(prod.data(), prod.data() + prod.size()));
}

double RunwaySplit::recombination_error() const {
  double s = self_term;
  for (double g : gate_terms) s += g;
  return std::abs(s - full_entry);
}

RunwaySplit direct_runway_split(std::span<const Tensor> attention, std::size_t source,
                                std::size_t destination, std::size_t depth) {
  if (depth == 0) throw DomainError("direct/runway split needs depth >= 1");
  if (depth > attention.size()) throw DomainError("split depth exceeds supplied layers");
  const std::size_t n = attention.front().dim(0);
  if (source >= n || destination >= n) throw DomainError("split positions outside sequence");
  const Tensor prefix = attention_path_product(attention, 0, depth - 1);
  const Tensor full = attention_path_product(attention, 0, depth);
  const Tensor& last = attention[depth - 1];
  RunwaySplit split;
  split.self_term = prefix(destination, source);
  for (std::size_t w = 0; w <= destination; ++w) {
    split.gate_terms.push_back(last(destination, w) * prefix(w, source));
  }
  split.full_entry = full(destination, source);
  return split;
}

std::vector<SensitivityReport> sensitivity_bound_sweep(const Model& model,
                                                       std::span<const std::size_t> tokens,
                                                       std::size_t first_layer, std::size_t depth,
                                                       const SensitivityOptions& options) {
  const auto& cfg = model.config();
  if (cfg.n_heads != 1) throw ConfigError("sensitivity checks need a single-head model");
  if (first_layer + depth > cfg.n_layers) {
    throw DomainError("layers [" + std::to_string(first_layer) + ", " +
                      std::to_string(first_layer + depth) + ") exceed the model's " +
                      std::to_string(cfg.n_layers));
  }
  Model frozen(model);
  frozen.set_trainable(false);
  const std::size_t n = tokens.size(), width = cfg.d_model;

  Tensor h;
  {
    NoGradGuard no_grad;
    h = frozen.run_layers(frozen.embed(tokens), 0, first_layer);
  }

  std::vector<Tensor> mixing;
  double lipschitz = depth == 0 ? 1.0 : 0.0;
  Tensor x = h;
  for (std::size_t t = 0; t < depth; ++t) {
    const std::size_t layer = first_layer + t;
    LayerRecord rec;
    Tensor u;
    {
      NoGradGuard no_grad;
      u = frozen.attention_residual(layer, x, {false, true}, &rec);
    }
    mixing.push_back(rec.mixing().reshape({n, n}));
    const auto jphi = rowwise_jacobians([&](const Tensor& v) { return frozen.update_map(layer, v); }, u);
    const auto jpsi = rowwise_jacobians([&](const Tensor& v) { return frozen.message_map(layer, v); }, x);
    double phi_max = 0.0, psi_max = 0.0;
    for (const auto& j : jphi) phi_max = std::max(phi_max, spectral_norm(j));
    for (const auto& j : jpsi) psi_max = std::max(psi_max, spectral_norm(j));
    lipschitz = std::max({lipschitz, phi_max, phi_max * psi_max});
    NoGradGuard no_grad;
    x = frozen.update_map(layer, u);
  }

  auto run = [&](bool detach) {
    return [&, detach](const Tensor& v) {
      return frozen.run_layers(v, first_layer, first_layer + depth, {false, detach});
    };
  };
  const Matrix jac = full_jacobian(run(true), h);
  std::optional<Matrix> full;
  if (options.full_gradient) full = full_jacobian(run(false), h);
  const Tensor product = depth == 0 ? Tensor::zeros({n, n}) : attention_path_product(mixing, 0, depth);
  const double scale = std::pow(lipschitz, static_cast<double>(depth));

  std::vector<SensitivityReport> reports;
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t s = 0; s < n; ++s) {
      SensitivityReport rep;
      rep.source = s;
      rep.destination = d;
      rep.first_layer = first_layer;
      rep.depth = depth;
      rep.measured_norm = block_norm(jac, d, s, width);
      rep.bound_matrix_entry = depth == 0 ? (s == d ? 1.0 : 0.0) : product(d, s);
      rep.lipschitz = lipschitz;
      rep.bound = scale * rep.bound_matrix_entry;
      rep.satisfied = rep.measured_norm <= rep.bound * (1.0 + 1e-9);
      if (full) rep.full_gradient_norm = block_norm(*full, d, s, width);
      reports.push_back(rep);
    }
  }
  return reports;
}

SensitivityReport sensitivity_bound_check(const Model& model, std::span<const std::size_t> tokens,
                                          std::size_t source, std::size_t destination,
                                          std::size_t first_layer, long depth,
                                          const SensitivityOptions& options) {
  if (depth < 0) throw DomainError("sensitivity depth must be non-negative");
  if (source >= tokens.size() || destination >= tokens.size()) {
    throw DomainError("token pair outside the sequence");
  }
  const auto reports = sensitivity_bound_sweep(model, tokens, first_layer,
                                               static_cast<std::size_t>(depth), options);
  return reports.at(destination * tokens.size() + source);
}

PerturbationDecomposition split_perturbation(const Tensor& delta) {
  if (delta.rank() != 2 || delta.dim(0) == 0) throw DimensionError("perturbation must be (n, d)");
  const std::size_t n = delta.dim(0), dm = delta.dim(1);
  const auto x = delta.data();
  std::vector<double> common(dm, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < dm; ++c) common[c] += x[i * dm + c];
  }
  for (auto& c : common) c /= static_cast<double>(n);
  std::vector<double> residual(x.begin(), x.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < dm; ++c) residual[i * dm + c] -= common[c];
  }
  return {Tensor({dm}, std::move(common)), Tensor({n, dm}, std::move(residual))};
}

namespace {

struct QueryAttention {
  Tensor weights;  // (1, n)
  Tensor values;   // (n, d_v)
};

QueryAttention attend(const Tensor& keys, const Tensor& query, const AttentionWeights& w) {
  const Tensor q = add_row(matmul(as_row(query), w.w_q), w.b_q);
  const Tensor k = add_row(matmul(keys, w.w_k), w.b_k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.w_k.dim(1)));
  const Tensor logits = affine(matmul(q, transpose(k)), scale);
  return {softmax_rows(logits), add_row(matmul(keys, w.w_v), w.b_v)};
}

void check_perturbation(const Tensor& keys, const Tensor& common, const Tensor& residual) {
  if (keys.rank() != 2 || residual.shape() != keys.shape() || common.numel() != keys.dim(1)) {
    throw DimensionError("perturbation shapes do not match keys " + shape_str(keys.shape()));
  }
}

}  // namespace

BlindspotResult blindspot_check(const Tensor& keys, const Tensor& common, const Tensor& residual,
                                const Tensor& query, const AttentionWeights& weights) {
  check_perturbation(keys, common, residual);
  NoGradGuard no_grad;
  const auto clean = attend(keys, query, weights);
  const auto moved = attend(add(add_common(keys, common), residual), query, weights);

  BlindspotResult res;
  const auto a = clean.weights.data(), b = moved.weights.data();
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap += (b[i] - a[i]) * (b[i] - a[i]);
  res.weight_gap = std::sqrt(gap);

  const Tensor q = add_row(matmul(as_row(query), weights.w_q), weights.b_q);
  res.projection_factor = l2(q.data()) * spectral_norm(weights.w_k) /
                          std::sqrt(static_cast<double>(weights.w_k.dim(1)));
  res.bound = res.softmax_lipschitz * res.projection_factor * l2(residual.data());

  const std::size_t n = a.size();
  Matrix jac(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) jac(i, j) = (i == j ? a[i] : 0.0) - a[i] * a[j];
  }
  res.local_softmax_norm = spectral_norm(jac);
  res.satisfied = res.weight_gap <= res.bound * (1.0 + 1e-9) + 1e-12;
  return res;
}

double cascade_check(const Tensor& keys, const Tensor& common, const Tensor& residual,
                     const Tensor& query, const AttentionWeights& weights) {
  check_perturbation(keys, common, residual);
  NoGradGuard no_grad;
  const Tensor shifted = add(keys, residual);
  const auto clean = attend(shifted, query, weights);
  const auto moved = attend(add_common(shifted, common), query, weights);
  const Tensor m_clean = matmul(clean.weights, clean.values);
  const Tensor m_moved = matmul(moved.weights, moved.values);
  const Tensor shift = matmul(as_row(common), weights.w_v);
  return l2(sub(sub(m_moved, shift), m_clean).data());
}

double cascade_check_rewired(const Tensor& tokens, const Tensor& common, const Tensor& residual,
                             const AttentionWeights& weights) {
  check_perturbation(tokens, common, residual);
  NoGradGuard no_grad;
  const std::size_t n = tokens.dim(0);
  const Tensor shifted = add(tokens, residual);
  const Tensor q = add_row(matmul(shifted, weights.w_q), weights.b_q);
  const double scale = 1.0 / std::sqrt(static_cast<double>(weights.w_k.dim(1)));

  auto message = [&](const Tensor& kv) {
    const Tensor k = add_row(matmul(kv, weights.w_k), weights.b_k);
    const Tensor v = add_row(matmul(kv, weights.w_v), weights.b_v);
    const Tensor a = softmax_rows(affine(matmul(q, transpose(k)), scale), Mask::causal(n));
    const Tensor r = runway_coefficients(v, RewiringMode{});
    const Tensor e_hat = rewire(a, r).e_hat;
    const auto last = e_hat.data().subspan((n - 1) * n, n);
    const Tensor row({1, n}, std::vector<double>(last.begin(), last.end()));
    return matmul(row, v);
  };
  const Tensor shift = matmul(as_row(common), weights.w_v);
  return l2(sub(sub(message(add_common(shifted, common)), shift), message(shifted)).data());
}

}  // namespace rway
