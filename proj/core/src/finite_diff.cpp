// SPDX-License-Identifier: Apache-2.0
#include "rway/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rway/error.hpp"

namespace rway {

namespace {

void require_finite(const Tensor& t, std::size_t perturbed) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("finite difference: non-finite output when perturbing input index " +
                         std::to_string(perturbed));
    }
  }
}

Tensor perturbed(const Tensor& x, std::size_t index, double delta) {
  std::vector<double> v(x.data().begin(), x.data().end());
  v[index] += delta;
  return Tensor(x.shape(), std::move(v));
}

}  // namespace

Tensor jacobian_fd(const VectorFn& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw ContractError("jacobian_fd: step must be positive");
  const std::size_t cols = x.numel();
  std::size_t rows = 0;
  std::vector<double> jac;
  for (std::size_t c = 0; c < cols; ++c) {
    Tensor plus;
    Tensor minus;
    try {
      plus = f(perturbed(x, c, step));
      minus = f(perturbed(x, c, -step));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (perturbing input index " +
                         std::to_string(c) + ")");
    }
    require_finite(plus, c);
    require_finite(minus, c);
    if (c == 0) {
      rows = plus.numel();
      jac.assign(rows * cols, 0.0);
    }
    if (plus.numel() != rows || minus.numel() != rows) {
      throw DimensionError("jacobian_fd: output size changed between evaluations");
    }
    const auto p = plus.data(), m = minus.data();
    for (std::size_t r = 0; r < rows; ++r) jac[r * cols + c] = (p[r] - m[r]) / (2.0 * step);
  }
  return Tensor({rows, cols}, std::move(jac));
}

Tensor gradient_fd(const ScalarFn& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw ContractError("gradient_fd: step must be positive");
  std::vector<double> grad(x.numel());
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + step;
    const double fp = f(Tensor(x.shape(), v));
    v[i] = orig - step;
    const double fm = f(Tensor(x.shape(), v));
    v[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("gradient_fd: non-finite output when perturbing input index " +
                         std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return Tensor(x.shape(), std::move(grad));
}

Tensor jacobian_tape(const VectorFn& f, const Tensor& x) {
  Tensor leaf = x.detach();
  leaf.requires_grad_();
  const Tensor y = f(leaf);
  const std::size_t rows = y.numel(), cols = x.numel();
  std::vector<double> jac(rows * cols, 0.0);
  if (!y.requires_grad()) return Tensor({rows, cols}, std::move(jac));
  std::vector<double> seed(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    leaf.zero_grad();
    seed[r] = 1.0;
    y.backward(Tensor(y.shape(), seed));
    seed[r] = 0.0;
    const auto g = leaf.grad_data();
    if (!g.empty()) std::copy(g.begin(), g.end(), jac.begin() + static_cast<long>(r * cols));
  }
  return Tensor({rows, cols}, std::move(jac));
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) throw DimensionError("max_relative_error: shape mismatch");
  double worst = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double denom = std::max({std::abs(x[i]), std::abs(y[i]), floor});
    worst = std::max(worst, std::abs(x[i] - y[i]) / denom);
  }
  return worst;
}

}  // namespace rway
