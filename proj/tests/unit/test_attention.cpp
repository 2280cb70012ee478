// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rway/attention.hpp"
#include "rway/error.hpp"
#include "rway/ops.hpp"
#include "rway/rng.hpp"
#include "test_util.hpp"

using namespace rway;

namespace {

AttentionWeights random_weights(std::size_t dm, std::uint64_t seed, double stddev = 0.3) {
  using fixture::random_tensor;
  return {random_tensor({dm, dm}, seed + 1, stddev), random_tensor({dm}, seed + 2, 0.1),
          random_tensor({dm, dm}, seed + 3, stddev), random_tensor({dm}, seed + 4, 0.1),
          random_tensor({dm, dm}, seed + 5, stddev), random_tensor({dm}, seed + 6, 0.1),
          random_tensor({dm, dm}, seed + 7, stddev), random_tensor({dm}, seed + 8, 0.1)};
}

// Scalar-loop reference of the per-head causal weights.
std::vector<std::vector<std::vector<double>>> reference_weights(const Tensor& h,
                                                                const AttentionWeights& w,
                                                                std::size_t heads, double theta) {
  const std::size_t n = h.dim(0), dm = h.dim(1), hd = dm / heads;
  auto project = [&](const Tensor& wt, const Tensor& b) {
    std::vector<std::vector<double>> out(n, std::vector<double>(dm));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dm; ++c) {
        double acc = b.data()[c];
        for (std::size_t p = 0; p < dm; ++p) acc += h(i, p) * wt(p, c);
        out[i][c] = acc;
      }
    return out;
  };
  auto q = project(w.w_q, w.b_q);
  auto k = project(w.w_k, w.b_k);
  auto rotate = [&](std::vector<std::vector<double>>& x) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t head = 0; head < heads; ++head)
        for (std::size_t c = 0; c < hd / 2; ++c) {
          const double angle = double(i) * std::pow(theta, -2.0 * double(c) / double(hd));
          double& a = x[i][head * hd + c];
          double& b = x[i][head * hd + c + hd / 2];
          const double a0 = a, b0 = b;
          a = a0 * std::cos(angle) - b0 * std::sin(angle);
          b = a0 * std::sin(angle) + b0 * std::cos(angle);
        }
  };
  rotate(q);
  rotate(k);
  std::vector<std::vector<std::vector<double>>> a(
      heads, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)));
  for (std::size_t head = 0; head < heads; ++head)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[i][head * hd + c] * k[j][head * hd + c];
        z[j] = dot / std::sqrt(double(hd));
        mx = std::max(mx, z[j]);
      }
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += std::exp(z[j] - mx);
      for (std::size_t j = 0; j <= i; ++j) a[head][i][j] = std::exp(z[j] - mx) / s;
    }
  return a;
}

double dot_row(const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.dim(1); ++c) s += x(i, c) * y(j, c);
  return s;
}

}  // namespace

TEST(Rope, PositionZeroIsIdentity) {
  const Tensor q = fixture::random_tensor({1, 8}, 1), k = fixture::random_tensor({1, 8}, 2);
  const std::vector<std::size_t> pos{0};
  auto [qr, kr] = apply_rope(q, k, pos);
  EXPECT_TRUE(bit_equal(qr, q));
  EXPECT_TRUE(bit_equal(kr, k));
}

TEST(Rope, PreservesNorms) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Tensor q = fixture::random_tensor({1, 16}, 10 + t);
    const std::vector<std::size_t> pos{rng.uniform_int(5000)};
    auto [qr, kr] = apply_rope(q, q, pos);
    EXPECT_NEAR(std::sqrt(dot_row(qr, 0, qr, 0)), std::sqrt(dot_row(q, 0, q, 0)), 1e-12);
  }
}

TEST(Rope, DependsOnRelativePositionOnly) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Tensor q = fixture::random_tensor({1, 8}, 100 + t);
    const Tensor k = fixture::random_tensor({1, 8}, 200 + t);
    const std::size_t m = rng.uniform_int(300), n = rng.uniform_int(300), s = rng.uniform_int(300);
    const std::vector<std::size_t> p1{m}, p2{n}, p3{m + s}, p4{n + s};
    const double before = dot_row(apply_rope(q, q, p1).first, 0, apply_rope(k, k, p2).first, 0);
    const double after = dot_row(apply_rope(q, q, p3).first, 0, apply_rope(k, k, p4).first, 0);
    EXPECT_NEAR(before, after, 1e-9);
  }
}

TEST(Rope, OddHeadDimIsConfigError) {
  const Tensor q = Tensor::zeros({2, 3});
  const std::vector<std::size_t> pos{0, 1};
  EXPECT_THROW(apply_rope(q, q, pos), ConfigError);
  EXPECT_THROW((AttentionConfig{2, 6, 10000.0}.validate()), ConfigError);
  EXPECT_THROW((AttentionConfig{3, 8, 10000.0}.validate()), ConfigError);
}

TEST(CausalAttention, SingleTokenGetsItsValueProjection) {
  const AttentionConfig cfg{2, 8, 10000.0};
  const auto w = random_weights(8, 11);
  const Tensor h = fixture::random_tensor({1, 8}, 12);
  const auto out = causal_attention(h, w, cfg, {.record = true});
  for (std::size_t head = 0; head < 2; ++head) EXPECT_EQ(out.record->weights_A(head, 0, 0), 1.0);
  const Tensor expected = add_row(matmul(add_row(matmul(h, w.w_v), w.b_v), w.w_o), w.b_o);
  EXPECT_LT(max_abs_diff(out.out, expected), 1e-14);
}

TEST(CausalAttention, IdenticalTokensGiveUniformRowsWithoutRope) {
  // RoPE makes equal tokens at different positions distinguishable, so the
  // symmetric case is checked with a rotation-free query/key (zero weights).
  AttentionConfig cfg{2, 8, 10000.0};
  auto w = random_weights(8, 13);
  w.w_q = Tensor::zeros({8, 8});
  w.w_k = Tensor::zeros({8, 8});
  w.b_q = Tensor::zeros({8});
  w.b_k = Tensor::zeros({8});
  const Tensor row = fixture::random_tensor({1, 8}, 14);
  std::vector<double> data;
  for (int i = 0; i < 5; ++i) data.insert(data.end(), row.data().begin(), row.data().end());
  const auto out = causal_attention(Tensor({5, 8}, data), w, cfg, {.record = true});
  for (std::size_t head = 0; head < 2; ++head)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        EXPECT_NEAR(out.record->weights_A(head, i, j), 1.0 / double(i + 1), 1e-10);
}

TEST(CausalAttention, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const AttentionConfig cfg{2, 8, 10000.0};
    const auto w = random_weights(8, 100 * seed, 0.6);
    const Tensor h = fixture::random_tensor({5, 8}, 100 * seed + 50);
    const auto rec = *causal_attention(h, w, cfg, {.record = true}).record;
    const auto ref = reference_weights(h, w, 2, 10000.0);
    EXPECT_EQ(rec.weights_A.shape(), (Shape{2, 5, 5}));
    EXPECT_EQ(rec.logits.shape(), (Shape{2, 5, 5}));
    EXPECT_EQ(rec.values_V.shape(), (Shape{2, 5, 4}));
    for (std::size_t head = 0; head < 2; ++head)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
          EXPECT_NEAR(rec.weights_A(head, i, j), ref[head][i][j], 1e-12);
  }
}

TEST(CausalAttention, RecordIsRowStochasticCausalAndPositive) {
  const AttentionConfig cfg{4, 16, 10000.0};
  const auto w = random_weights(16, 21, 1.0);
  const auto rec = *causal_attention(fixture::random_tensor({9, 16}, 22, 2.0), w, cfg,
                                     {.record = true})
                        .record;
  for (std::size_t head = 0; head < 4; ++head)
    for (std::size_t i = 0; i < 9; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        if (j > i) {
          EXPECT_EQ(rec.weights_A(head, i, j), 0.0);
        } else {
          EXPECT_GT(rec.weights_A(head, i, j), 0.0);
          s += rec.weights_A(head, i, j);
        }
      }
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
}

TEST(CausalAttention, RecordIsOptIn) {
  const AttentionConfig cfg{1, 8, 10000.0};
  EXPECT_FALSE(causal_attention(Tensor::zeros({3, 8}), random_weights(8, 1), cfg).record);
}

TEST(CausalAttention, PerturbingLaterTokenLeavesEarlierOutputs) {
  const AttentionConfig cfg{2, 8, 10000.0};
  const auto w = random_weights(8, 31);
  const Tensor h = fixture::random_tensor({6, 8}, 32);
  const Tensor base = causal_attention(h, w, cfg).out;
  for (std::size_t j = 0; j < 6; ++j) {
    std::vector<double> moved(h.data().begin(), h.data().end());
    for (std::size_t c = 0; c < 8; ++c) moved[j * 8 + c] += 0.5;
    const Tensor out = causal_attention(Tensor({6, 8}, moved), w, cfg).out;
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out(i, c), base(i, c));
    EXPECT_NE(out(j, 0), base(j, 0));
  }
}

TEST(CausalAttention, PrefixStableBitIdentical) {
  const AttentionConfig cfg{2, 8, 10000.0};
  const auto w = random_weights(8, 41);
  const Tensor h = fixture::random_tensor({7, 8}, 42);
  const Tensor full = causal_attention(h, w, cfg).out;
  for (std::size_t k = 1; k <= 7; ++k) {
    const Tensor prefix(
        {k, 8}, std::vector<double>(h.data().begin(), h.data().begin() + std::ptrdiff_t(k * 8)));
    const Tensor out = causal_attention(prefix, w, cfg).out;
    for (std::size_t i = 0; i < k * 8; ++i) ASSERT_EQ(out.data()[i], full.data()[i]);
  }
}

TEST(CausalAttention, DetachedWeightsMakeOutputLinearInValues) {
  const AttentionConfig cfg{1, 4, 10000.0};
  auto w = random_weights(4, 51);
  Tensor h = fixture::param({3, 4}, 52);
  const auto out = causal_attention(h, w, cfg, {.record = true, .detach_weights = true});
  sum(out.out).backward();
  // Gradient with constant weights: d/dh sum(A (hW_V + b_V) W_O) = A^T 1 (W_V W_O 1)^T.
  const Tensor a = out.record->weights_A.reshape({3, 3});
  const Tensor col = matmul(matmul(w.w_v, w.w_o), Tensor::ones({4, 1}));
  const Tensor expected = matmul(matmul(transpose(a), Tensor::ones({3, 1})), transpose(col));
  EXPECT_LT(max_abs_diff(h.grad(), expected), 1e-12);
}
