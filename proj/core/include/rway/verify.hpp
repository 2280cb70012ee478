// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rway/model.hpp"

namespace rway {

/// One entry of the verification report. Asserted checks decide the exit
/// status; the others are informational.
struct CheckRecord {
  std::string check;
  std::string variant;
  std::uint64_t seed = 0;
  std::string inputs_hash;  // 16 hex digits, FNV-1a over the inputs
  nlohmann::json measured;
  nlohmann::json bound;
  bool passed = false;
  bool asserted = true;
  std::string note;
};

void to_json(nlohmann::json& j, const CheckRecord& rec);

struct VerifyConfig {
  std::size_t seeds = 1;
  std::uint64_t base_seed = 0;
  std::size_t n_tokens = 6;
  std::size_t max_depth = 3;
  std::size_t softmax_rows = 1000;
  std::size_t positivity_forwards = 200;
  std::size_t rewiring_instances = 1000;
  std::size_t runway_max_n = 12;
  bool rewired_sensitivity = true;
  bool full_gradient = false;
};

void to_json(nlohmann::json& j, const VerifyConfig& cfg);
void from_json(const nlohmann::json& j, VerifyConfig& cfg);

struct VerifyReport {
  VerifyConfig config;
  std::vector<CheckRecord> checks;

  std::size_t failed() const;
  bool all_passed() const { return failed() == 0; }
  nlohmann::json to_json() const;
};

/// Single-head toy model used by the theory checks: the d = 1 widths with
/// three layers so that depths up to 3 fit.
ModelConfig theory_toy_config(AttentionKind kind, std::uint64_t seed);

/// Seed of repetition `index` derived from the base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Individual checks; each is deterministic in its seed.
CheckRecord check_softmax_shift(std::uint64_t seed, std::size_t rows);
CheckRecord check_attention_positivity(std::uint64_t seed, AttentionKind kind,
                                       std::size_t forwards);
std::vector<CheckRecord> check_blindspot(std::uint64_t seed);
std::vector<CheckRecord> check_cascade(std::uint64_t seed);
/// Sensitivity bound for every depth 1..max_depth and every token pair,
/// plus the direct/runway recombination of the attention products.
std::vector<CheckRecord> check_sensitivity(std::uint64_t seed, AttentionKind kind,
                                           std::size_t n_tokens, std::size_t max_depth,
                                           bool full_gradient = false);
CheckRecord check_runway_enumeration(std::size_t max_n);
CheckRecord check_rewiring_invariants(std::uint64_t seed, std::size_t instances);

/// Runs the whole suite `cfg.seeds` times.
VerifyReport run_verify(const VerifyConfig& cfg);

}  // namespace rway
