// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rway {

/// Byte-level tokenizer: every byte is its own token, vocab 256.
inline constexpr std::size_t kByteVocab = 256;

std::vector<std::size_t> encode_bytes(std::string_view text);
/// Throws InputError for ids above 255.
std::string decode_bytes(std::span<const std::size_t> tokens);

/// Reads a corpus. Files ending in ".ids" hold whitespace separated decimal
/// token ids; anything else is read as raw bytes. Throws InputError if the
/// file cannot be read, is empty, or holds a malformed id.
std::vector<std::size_t> load_tokens(const std::filesystem::path& path);

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// The last val_fraction of the stream becomes validation data.
DataSplit split_tokens(std::span<const std::size_t> tokens, double val_fraction);

/// Deterministic English-like text built from a small grammar, for smoke
/// runs and tests that need a byte corpus without external downloads.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace rway
