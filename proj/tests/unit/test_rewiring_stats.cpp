// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "rway/data.hpp"
#include "rway/error.hpp"
#include "rway/rewiring.hpp"
#include "rway/rng.hpp"
#include "rway/rewiring_stats.hpp"
#include "test_util.hpp"

using namespace rway;

TEST(RewiringStats, StandardModelIsRejected) {
  const Model model(fixture::tiny_config(AttentionKind::standard));
  const std::vector<std::size_t> tokens(40, 1);
  EXPECT_THROW(analyze_rewiring(model, tokens, 8, 2), ConfigError);
  const Model rewired(fixture::tiny_config(AttentionKind::rewired_dot));
  EXPECT_THROW(analyze_rewiring(rewired, std::vector<std::size_t>(5, 1), 8, 2), InputError);
}

TEST(RewiringStats, MatchesRecordedFactors) {
  const Model model(fixture::tiny_config(AttentionKind::rewired_bilinear, 3));
  std::vector<std::size_t> tokens(60);
  for (std::size_t i = 0; i < 60; ++i) tokens[i] = (i * 5 + 1) % 11;
  const auto stats = analyze_rewiring(model, tokens, 10, 4);
  EXPECT_EQ(stats.windows, 4u);
  EXPECT_EQ(stats.layers, 2u);

  // Independent pooling of the recorded factors.
  std::vector<double> mean(100, 0.0), src_sum(10, 0.0), dst_sum(10, 0.0);
  std::vector<std::size_t> src_n(10, 0), dst_n(10, 0);
  for (std::size_t w = 0; w < 4; ++w) {
    const auto res = model.forward(std::span(tokens).subspan(w * 10, 10), {.record = true});
    for (const auto& rec : res.records)
      for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
          const double b = rec.rewiring->beta(i, j);
          mean[i * 10 + j] += b / 8.0;
          if (j + 2 <= i && j != 0) {
            src_sum[j] += b;
            ++src_n[j];
            dst_sum[i] += b;
            ++dst_n[i];
          }
        }
  }
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_NEAR(stats.mean_beta(i, j), mean[i * 10 + j], 1e-14);
      if (j <= i && !is_eligible_edge(i, j)) {
        EXPECT_EQ(stats.mean_beta(i, j), 1.0);
      }
      if (is_eligible_edge(i, j)) {
        EXPECT_GT(stats.mean_beta(i, j), 0.0);
        EXPECT_LE(stats.mean_beta(i, j), 1.0);
      }
    }
    if (i == 0) {
      EXPECT_EQ(*stats.source_mean[0], 1.0);
      EXPECT_EQ(*stats.source_std[0], 0.0);
    } else if (src_n[i] > 0) {
      EXPECT_NEAR(*stats.source_mean[i], src_sum[i] / double(src_n[i]), 1e-14);
    } else {
      EXPECT_FALSE(stats.source_mean[i].has_value());
    }
    if (dst_n[i] > 0) {
      EXPECT_NEAR(*stats.destination_mean[i], dst_sum[i] / double(dst_n[i]), 1e-14);
    } else {
      EXPECT_FALSE(stats.destination_mean[i].has_value());
    }
  }
  EXPECT_FALSE(stats.destination_mean[0].has_value());
  EXPECT_FALSE(stats.destination_mean[1].has_value());
}

TEST(RewiringStats, UntrainedModelSitsNearHalf) {
  // Small init makes the value dot products tiny, so every eligible r is
  // close to sigmoid(0) and the complement close to 1/2.
  ModelConfig cfg = ModelConfig::from_scale(1, AttentionKind::rewired_dot, 256, 64);
  const Model model(cfg);
  Rng rng(2);
  std::vector<std::size_t> tokens(64 * 8);
  for (auto& t : tokens) t = rng.uniform_int(256);
  const auto stats = analyze_rewiring(model, tokens, 64, 8);
  for (std::size_t j = 1; j + 2 < 64; ++j) {
    ASSERT_TRUE(stats.source_mean[j].has_value());
    EXPECT_NEAR(*stats.source_mean[j], 0.5, 5e-3);
    EXPECT_LT(*stats.source_std[j], 0.05);
  }
}

TEST(RewiringStats, JsonLayout) {
  const Model model(fixture::tiny_config(AttentionKind::rewired_dot));
  const std::vector<std::size_t> tokens(30, 4);
  const auto j = to_json(analyze_rewiring(model, tokens, 5, 3));
  EXPECT_EQ(j.at("seq_len"), 5);
  EXPECT_EQ(j.at("windows"), 3);
  EXPECT_TRUE(j.at("mean_beta_matrix")[1][2].is_null());
  EXPECT_EQ(j.at("mean_beta_matrix")[4][0], 1.0);
  EXPECT_TRUE(j.at("per_destination_mean")[0].is_null());
  EXPECT_FALSE(j.at("per_destination_mean")[4].is_null());
  EXPECT_EQ(j.at("per_source_mean")[0], 1.0);
  EXPECT_TRUE(j.at("per_source_mean")[4].is_null());
}
