// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rway/model.hpp"

namespace rway {

class Rng;

/// Anything that scores the next token of a byte sequence.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  /// Logits (vocab_size) for the token following the context.
  virtual std::vector<double> next_token_logits(std::span<const std::size_t> context) const = 0;
};

/// Adapter over a trained Model; recomputes the whole prefix per call.
class TransformerLM final : public LanguageModel {
 public:
  explicit TransformerLM(const Model& model) : model_(model) {}
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::vector<double> next_token_logits(std::span<const std::size_t> context) const override;

 private:
  const Model& model_;
};

/// Emits a pseudo-random digit that depends only on (seed, context).
class RandomDigitStub final : public LanguageModel {
 public:
  explicit RandomDigitStub(std::uint64_t seed) : seed_(seed) {}
  std::size_t vocab_size() const override { return 256; }
  std::vector<double> next_token_logits(std::span<const std::size_t> context) const override;

 private:
  std::uint64_t seed_;
};

/// Reads the passkey back out of the needle, so it always answers right.
class OracleStub final : public LanguageModel {
 public:
  std::size_t vocab_size() const override { return 256; }
  std::vector<double> next_token_logits(std::span<const std::size_t> context) const override;
};

inline constexpr std::string_view kPasskeyPrompt = " The passkey is ";
inline constexpr std::size_t kPasskeyDigits = 5;

/// " The passkey is 12345. "
std::string passkey_needle(std::string_view passkey);
std::string random_passkey(Rng& rng);

struct PasskeyPrompt {
  std::vector<std::size_t> tokens;  // seq_len tokens ending with the prompt
  std::size_t needle_start = 0;
  std::size_t needle_len = 0;
  std::size_t prompt_len = 0;
};

/// Filler with the needle at round(depth * (seq_len - needle - prompt)) and
/// the retrieval prompt at the end. Filler is read from filler_offset on.
/// Throws InputError if seq_len cannot hold needle and prompt, or if the
/// filler is too short; DomainError for a depth outside [0, 1].
PasskeyPrompt build_passkey_prompt(std::span<const std::size_t> filler, std::size_t seq_len,
                                   double depth, std::string_view passkey,
                                   std::size_t filler_offset = 0);

/// Greedy argmax decoding of `count` tokens (lowest id wins ties).
std::vector<std::size_t> greedy_decode(const LanguageModel& lm,
                                       std::span<const std::size_t> prompt, std::size_t count);

/// Character-exact comparison; no partial credit.
bool passkey_exact_match(std::string_view predicted, std::string_view passkey);

struct PasskeyTrial {
  std::size_t seq_len = 0;
  double depth = 0.0;
  std::size_t trial = 0;
  std::string passkey;
  std::size_t needle_start = 0;
  std::size_t needle_end = 0;  // exclusive
  std::string predicted;
  bool exact = false;
};

struct PasskeyCell {
  std::size_t seq_len = 0;
  double depth = 0.0;
  std::size_t trials = 0;
  double accuracy = 0.0;
};

/// Runs every (seq_len, depth, trial). Passkeys and filler offsets come from
/// `seed`, so results are reproducible. Trials run in parallel; the returned
/// order is (seq_len, depth, trial).
std::vector<PasskeyTrial> run_passkey(const LanguageModel& lm,
                                      std::span<const std::size_t> filler,
                                      std::span<const std::size_t> seq_lens,
                                      std::span<const double> depths, std::size_t trials,
                                      std::uint64_t seed);

std::vector<PasskeyCell> passkey_accuracy(std::span<const PasskeyTrial> trials);

}  // namespace rway
