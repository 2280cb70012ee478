// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace rway {

/// Deterministic PRNG: xoshiro256** seeded through SplitMix64.
///
/// Streams are derived by label with split(), so a consumer that owns its
/// own label draws the same numbers no matter what other consumers did
/// before it. Normal variates use Box-Muller on our own uniforms, which keeps
/// the stream identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent child stream keyed by (seed, label).
  Rng split(std::string_view label) const;
  /// Independent child stream keyed by (seed, index).
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound) noexcept;
  double normal(double mean = 0.0, double stddev = 1.0) noexcept;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finaliser; exposed for hashing seeds and labels.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

}  // namespace rway
