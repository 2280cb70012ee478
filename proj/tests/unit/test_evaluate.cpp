// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "rway/error.hpp"
#include "rway/evaluate.hpp"
#include "rway/ops.hpp"
#include "test_util.hpp"

using namespace rway;

namespace {

std::vector<std::size_t> stream(std::size_t n) {
  std::vector<std::size_t> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = (i * 7 + i / 5) % 11;
  return t;
}

}  // namespace

TEST(Evaluate, MatchesDirectLossOverWindows) {
  const Model model(fixture::tiny_config(AttentionKind::rewired_dot, 2));
  const auto tokens = stream(100);
  const auto rec = evaluate_loss(model, tokens, 9, 5);
  EXPECT_EQ(rec.windows, 5u);
  EXPECT_EQ(rec.seq_len, 9u);
  double total = 0.0;
  for (std::size_t w = 0; w < 5; ++w) {
    const std::vector<std::size_t> row(tokens.begin() + std::ptrdiff_t(w * 10),
                                       tokens.begin() + std::ptrdiff_t(w * 10 + 10));
    total += fixture::row_loss(model, row).item();
  }
  EXPECT_NEAR(rec.loss, total / 5.0, 1e-13);
  EXPECT_NEAR(rec.perplexity, std::exp(rec.loss), 1e-12 * rec.perplexity);
  ASSERT_EQ(rec.position_losses.size(), 9u);
  double mean_pos = 0.0;
  for (double x : rec.position_losses) mean_pos += x;
  EXPECT_NEAR(mean_pos / 9.0, rec.loss, 1e-13);
}

TEST(Evaluate, WindowBudgetAndShortData) {
  const Model model(fixture::tiny_config(AttentionKind::standard));
  const auto tokens = stream(35);
  EXPECT_EQ(evaluate_loss(model, tokens, 9, 100).windows, 3u);
  EXPECT_THROW(evaluate_loss(model, stream(9), 9, 1), InputError);
  EXPECT_THROW(evaluate_loss(model, tokens, 0, 1), ConfigError);
}

TEST(Evaluate, DeterministicAcrossThreadCounts) {
  const Model model(fixture::tiny_config(AttentionKind::rewired_bilinear, 3));
  const auto tokens = stream(400);
  const auto a = evaluate_loss(model, tokens, 12, 20);
  setenv("RWAY_THREADS", "1", 1);
  const auto b = evaluate_loss(model, tokens, 12, 20);
  setenv("RWAY_THREADS", "3", 1);
  const auto c = evaluate_loss(model, tokens, 12, 20);
  unsetenv("RWAY_THREADS");
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.loss, c.loss);
  EXPECT_EQ(a.position_losses, c.position_losses);
}

TEST(Evaluate, ExtrapolationSweepBeyondTrainingLength) {
  const Model model(fixture::tiny_config(AttentionKind::standard, 1));
  const auto tokens = stream(600);
  const std::vector<std::size_t> lens{8, 16, 32};
  const auto recs = extrapolation_sweep(model, tokens, lens, 4);
  ASSERT_EQ(recs.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(recs[k].seq_len, lens[k]);
    EXPECT_EQ(recs[k].loss, evaluate_loss(model, tokens, lens[k], 4).loss);
  }
}
