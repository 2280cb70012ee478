// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rway/model.hpp"
#include "rway/train.hpp"

namespace rway {

/// Experiment configuration file: {"model": {...}, "train": {...}}.
/// Missing sections take the desk-scale defaults (d = 2, 128-token windows).
struct RunConfig {
  ModelConfig model = ModelConfig::from_scale(2, AttentionKind::standard, 256, 128);
  TrainConfig train;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const nlohmann::json& j);

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<AttentionKind> attention;
  std::optional<std::size_t> steps;
  std::optional<std::filesystem::path> resume;
  bool record_attention = false;
  std::size_t log_every = 100;
};

struct PasskeyOptions {
  std::optional<std::filesystem::path> checkpoint;
  /// "oracle" or "random" replace the checkpoint with a scoring stub.
  std::optional<std::string> stub;
  std::vector<std::size_t> seq_lens = {128, 256};
  std::vector<double> depths = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t trials = 10;
  std::filesystem::path filler;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::optional<AttentionKind> attention;
};

struct ExtrapolateOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::vector<std::size_t> eval_lens;
  std::optional<std::size_t> train_len;
  std::optional<std::size_t> windows;
  std::filesystem::path out = "out";
  std::optional<AttentionKind> attention;
  bool record_attention = false;
};

struct AnalyzeOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::size_t n_batches = 8;
  std::optional<std::size_t> seq_len;
  std::filesystem::path out = "out";
  std::optional<AttentionKind> attention;
};

struct VerifyOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "out";
};

// Each command writes its files under `out` and returns a process exit code.
// Errors surface as exceptions from the rway error hierarchy.
int cmd_train(const TrainOptions& options, std::ostream& log);
int cmd_passkey(const PasskeyOptions& options, std::ostream& log);
int cmd_extrapolate(const ExtrapolateOptions& options, std::ostream& log);
int cmd_analyze_rewiring(const AnalyzeOptions& options, std::ostream& log);
int cmd_verify(const VerifyOptions& options, std::ostream& log);

/// Writes per-layer attention (and rewiring) matrices of one forward pass.
void write_attention_records(const Model& model, std::span<const std::size_t> tokens,
                             const std::filesystem::path& path);

}  // namespace rway
