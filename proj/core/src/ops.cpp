// SPDX-License-Identifier: Apache-2.0
#include "rway/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "rway/error.hpp"

namespace rway {

using detail::BackwardArgs;

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Mask Mask::all(std::size_t rows, std::size_t cols) {
  return Mask{rows, cols, std::vector<unsigned char>(rows * cols, 1)};
}

Mask Mask::causal(std::size_t n) {
  Mask m{n, n, std::vector<unsigned char>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
  }
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(m, n, k, a.data(), b.data(), out, false);
  return make_result({m, n}, std::move(out), {a, b}, "matmul",
                     [a, b, m, n, k](const BackwardArgs& g) {
                       if (double* ga = g.input_grads[0]) {
                         std::vector<double> bt(n * k);
                         kernels::transpose(k, n, b.data(), bt);
                         kernels::gemm(m, k, n, g.grad, bt, {ga, m * k}, true);
                       }
                       if (double* gb = g.input_grads[1]) {
                         std::vector<double> at(k * m);
                         kernels::transpose(m, k, a.data(), at);
                         kernels::gemm(k, n, m, at, g.grad, {gb, k * n}, true);
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  kernels::transpose(m, n, a.data(), out);
  return make_result({n, m}, std::move(out), {a}, "transpose", [m, n](const BackwardArgs& g) {
    std::vector<double> back(m * n);
    kernels::transpose(n, m, g.grad, back);
    double* ga = g.input_grads[0];
    for (std::size_t i = 0; i < m * n; ++i) ga[i] += back[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](const BackwardArgs& g) {
    for (double* gi : g.input_grads) {
      if (!gi) continue;
      for (std::size_t i = 0; i < g.grad.size(); ++i) gi[i] += g.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](const BackwardArgs& g) {
    if (double* ga = g.input_grads[0]) {
      for (std::size_t i = 0; i < g.grad.size(); ++i) ga[i] += g.grad[i];
    }
    if (double* gb = g.input_grads[1]) {
      for (std::size_t i = 0; i < g.grad.size(); ++i) gb[i] -= g.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [a, b](const BackwardArgs& g) {
    const auto x = a.data(), y = b.data();
    if (double* ga = g.input_grads[0]) {
      for (std::size_t i = 0; i < g.grad.size(); ++i) ga[i] += g.grad[i] * y[i];
    }
    if (double* gb = g.input_grads[1]) {
      for (std::size_t i = 0; i < g.grad.size(); ++i) gb[i] += g.grad[i] * x[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row");
  require_rank(bias, 1, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " for " +
                         shape_str(a.shape()));
  }
  const auto x = a.data(), b = bias.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + b[j];
  }
  return make_result({m, n}, std::move(out), {a, bias}, "add_row", [m, n](const BackwardArgs& g) {
    if (double* ga = g.input_grads[0]) {
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += g.grad[i];
    }
    if (double* gb = g.input_grads[1]) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += g.grad[i * n + j];
      }
    }
  });
}

Tensor affine(const Tensor& a, double scale, double shift) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i] + shift;
  return make_result(a.shape(), std::move(out), {a}, "affine", [scale](const BackwardArgs& g) {
    double* ga = g.input_grads[0];
    for (std::size_t i = 0; i < g.grad.size(); ++i) ga[i] += scale * g.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const std::size_t n = a.numel();
  return make_result({}, {s}, {a}, "sum", [n](const BackwardArgs& g) {
    double* ga = g.input_grads[0];
    for (std::size_t i = 0; i < n; ++i) ga[i] += g.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return affine(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax_rows(const Tensor& x, const Mask& mask) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (mask.rows != m || mask.cols != n) {
    throw DimensionError("softmax_rows: mask " + shape_str({mask.rows, mask.cols}) + " for " +
                         shape_str(x.shape()));
  }
  const auto z = x.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask(i, j)) {
        zmax = std::max(zmax, z[i * n + j]);
        any = true;
      }
    }
    if (!any) throw ContractError("softmax_rows: row " + std::to_string(i) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask(i, j)) {
        const double e = std::exp(z[i * n + j] - zmax);
        out[i * n + j] = e;
        total += e;
      }
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  return make_result({m, n}, std::move(out), {x}, "softmax_rows", [m, n](const BackwardArgs& g) {
    double* gx = g.input_grads[0];
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = g.out.data() + i * n;
      const double* gy = g.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  return softmax_rows(x, Mask::all(x.dim(0), x.dim(1)));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: affine parameters must have shape (" + std::to_string(n) +
                         ")");
  }
  const auto in = x.data(), gm = gamma.data(), bt = beta.data();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gm[j] + bt[j];
    }
  }
  return make_result(
      {m, n}, std::move(out), {x, gamma, beta}, "layer_norm",
      [m, n, gamma, xhat = std::move(xhat), inv_std = std::move(inv_std)](const BackwardArgs& g) {
        const auto gm = gamma.data();
        if (double* gg = g.input_grads[1]) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += g.grad[i * n + j] * xhat[i * n + j];
          }
        }
        if (double* gb = g.input_grads[2]) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += g.grad[i * n + j];
          }
        }
        if (double* gx = g.input_grads[0]) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g.grad[i * n + j] * gm[j];
              sum_d += d;
              sum_dx += d * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g.grad[i * n + j] * gm[j];
              gx[i * n + j] +=
                  inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x}, "gelu", [x](const BackwardArgs& g) {
    const auto in = x.data();
    double* gx = g.input_grads[0];
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      gx[i] += g.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    // Branch keeps exp() from overflowing for large |v|.
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result(x.shape(), std::move(out), {x}, "sigmoid", [](const BackwardArgs& g) {
    double* gx = g.input_grads[0];
    for (std::size_t i = 0; i < g.out.size(); ++i) {
      gx[i] += g.grad[i] * g.out[i] * (1.0 - g.out[i]);
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank(table, 2, "gather_rows");
  const std::size_t rows = table.dim(0), n = table.dim(1);
  const auto src = table.data();
  std::vector<double> out(indices.size() * n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw InputError("gather_rows: index " + std::to_string(indices[i]) + " >= " +
                       std::to_string(rows));
    }
    std::copy_n(src.data() + indices[i] * n, n, out.data() + i * n);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({indices.size(), n}, std::move(out), {table}, "gather_rows",
                     [idx = std::move(idx), n](const BackwardArgs& g) {
                       double* gt = g.input_grads[0];
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < n; ++j) {
                           gt[idx[i] * n + j] += g.grad[i * n + j];
                         }
                       }
                     });
}

Tensor rotary(const Tensor& x, std::span<const std::size_t> positions, double theta) {
  require_rank(x, 2, "rotary");
  const std::size_t m = x.dim(0), dim = x.dim(1);
  if (dim % 2 != 0) throw ConfigError("rotary: dimension must be even, got " + std::to_string(dim));
  if (positions.size() != m) throw DimensionError("rotary: one position per row required");
  const std::size_t half = dim / 2;
  std::vector<double> cosv(m * half), sinv(m * half);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < half; ++c) {
      const double freq =
          std::pow(theta, -2.0 * static_cast<double>(c) / static_cast<double>(dim));
      const double angle = static_cast<double>(positions[i]) * freq;
      cosv[i * half + c] = std::cos(angle);
      sinv[i * half + c] = std::sin(angle);
    }
  }
  const auto in = x.data();
  std::vector<double> out(m * dim);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < half; ++c) {
      const double a = in[i * dim + c], b = in[i * dim + c + half];
      const double co = cosv[i * half + c], si = sinv[i * half + c];
      out[i * dim + c] = a * co - b * si;
      out[i * dim + c + half] = a * si + b * co;
    }
  }
  return make_result({m, dim}, std::move(out), {x}, "rotary",
                     [m, dim, half, cosv = std::move(cosv),
                      sinv = std::move(sinv)](const BackwardArgs& g) {
                       double* gx = g.input_grads[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t c = 0; c < half; ++c) {
                           const double ga = g.grad[i * dim + c];
                           const double gb = g.grad[i * dim + c + half];
                           const double co = cosv[i * half + c], si = sinv[i * half + c];
                           gx[i * dim + c] += ga * co + gb * si;
                           gx[i * dim + c + half] += -ga * si + gb * co;
                         }
                       }
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + width > n) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + width) + ") outside " + shape_str(x.shape()));
  }
  const auto in = x.data();
  std::vector<double> out(m * width);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(in.data() + i * n + start, width, out.data() + i * width);
  }
  return make_result({m, width}, std::move(out), {x}, "slice_cols",
                     [m, n, start, width](const BackwardArgs& g) {
                       double* gx = g.input_grads[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < width; ++j) {
                           gx[i * n + start + j] += g.grad[i * width + j];
                         }
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(in.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    }
    offset += widths[k];
  }
  return make_result({m, total}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     "concat_cols", [m, total, widths](const BackwardArgs& g) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (double* gp = g.input_grads[k]) {
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < widths[k]; ++j) {
                               gp[i * widths[k] + j] += g.grad[i * total + offset + j];
                             }
                           }
                         }
                         offset += widths[k];
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.dim(0), v = logits.dim(1);
  if (targets.size() != m) throw DimensionError("cross_entropy: one target per row required");
  if (m == 0) throw DimensionError("cross_entropy: empty batch");
  const auto z = logits.data();
  std::vector<double> probs(m * v);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= v) throw InputError("cross_entropy: target out of range");
    const double* row = z.data() + i * v;
    const double zmax = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - zmax);
      s += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= s;
    total += -(row[targets[i]] - zmax - std::log(s));
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_result({}, {total / static_cast<double>(m)}, {logits}, "cross_entropy",
                     [m, v, probs = std::move(probs), tgt = std::move(tgt)](const BackwardArgs& g) {
                       double* gz = g.input_grads[0];
                       const double scale = g.grad[0] / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < v; ++j) {
                           const double onehot = (j == tgt[i]) ? 1.0 : 0.0;
                           gz[i * v + j] += scale * (probs[i * v + j] - onehot);
                         }
                       }
                     });
}

}  // namespace rway
