// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cctype>
#include <set>

#include "rway/error.hpp"
#include "rway/verify.hpp"

using namespace rway;

namespace {

void expect_record(const CheckRecord& rec) {
  EXPECT_TRUE(rec.passed) << rec.check << "/" << rec.variant << ": " << rec.measured.dump();
  ASSERT_EQ(rec.inputs_hash.size(), 16u);
  for (char c : rec.inputs_hash) EXPECT_TRUE(std::isxdigit(static_cast<unsigned char>(c)));
}

}  // namespace

TEST(Verify, ToyConfigIsSingleHeadThreeLayers) {
  const auto cfg = theory_toy_config(AttentionKind::rewired_dot, 4);
  EXPECT_EQ(cfg.n_heads, 1u);
  EXPECT_EQ(cfg.n_layers, 3u);
  EXPECT_EQ(cfg.d_model, 64u);
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_EQ(cfg.attention_kind, AttentionKind::rewired_dot);
}

TEST(Verify, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(7, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
}

TEST(Verify, IndividualChecksPass) {
  expect_record(check_softmax_shift(1, 200));
  expect_record(check_attention_positivity(1, AttentionKind::standard, 20));
  expect_record(check_attention_positivity(1, AttentionKind::rewired_bilinear, 20));
  for (const auto& rec : check_blindspot(2)) expect_record(rec);
  for (const auto& rec : check_cascade(3)) {
    if (rec.asserted) {
      expect_record(rec);
    } else {
      EXPECT_EQ(rec.variant, "rewired_dot");
      EXPECT_TRUE(rec.bound.is_null());
    }
  }
  expect_record(check_runway_enumeration(8));
  expect_record(check_rewiring_invariants(4, 100));
}

TEST(Verify, SensitivityRecordsPerDepth) {
  const auto recs = check_sensitivity(5, AttentionKind::standard, 4, 2);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].variant, "standard/depth=1");
  EXPECT_EQ(recs[1].variant, "standard/depth=2");
  EXPECT_EQ(recs[0].measured.at("pairs").size(), 16u);
  EXPECT_EQ(recs[2].check, "runway_split");
  for (const auto& rec : recs) expect_record(rec);
}

TEST(Verify, ChecksAreDeterministic) {
  const nlohmann::json a = check_blindspot(9), b = check_blindspot(9), c = check_blindspot(10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Verify, ReportShape) {
  VerifyConfig cfg;
  cfg.n_tokens = 4;
  cfg.max_depth = 2;
  cfg.softmax_rows = 50;
  cfg.positivity_forwards = 10;
  cfg.rewiring_instances = 50;
  cfg.runway_max_n = 6;
  const auto report = run_verify(cfg);
  EXPECT_TRUE(report.all_passed());
  const auto j = report.to_json();
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_EQ(j.at("summary").at("total"), report.checks.size());
  EXPECT_EQ(j.at("summary").at("failed"), 0);
  EXPECT_EQ(j.at("summary").at("passed"), true);
  EXPECT_EQ(j.at("config").get<VerifyConfig>().max_depth, 2u);
  std::set<std::string> kinds;
  for (const auto& rec : report.checks) kinds.insert(rec.check);
  const std::set<std::string> expected{"softmax_shift_invariance", "attention_positivity",
                                       "blindspot", "cascade", "sensitivity_bound",
                                       "runway_split", "runway_enumeration", "rewiring_invariants"};
  EXPECT_EQ(kinds, expected);
}

TEST(Verify, FailedCountsOnlyAssertedChecks) {
  VerifyReport report;
  report.checks.push_back({"a", "", 0, "0000000000000000", 1, 0, false, false, ""});
  EXPECT_TRUE(report.all_passed());
  report.checks.push_back({"b", "", 0, "0000000000000000", 1, 0, false, true, ""});
  EXPECT_EQ(report.failed(), 1u);
}

TEST(Verify, ConfigJson) {
  VerifyConfig cfg;
  cfg.seeds = 3;
  cfg.full_gradient = true;
  const nlohmann::json j = cfg;
  const auto back = j.get<VerifyConfig>();
  EXPECT_EQ(back.seeds, 3u);
  EXPECT_TRUE(back.full_gradient);
  EXPECT_THROW((nlohmann::json{{"seed", 3}}.get<VerifyConfig>()), ConfigError);
}
