// SPDX-License-Identifier: Apache-2.0
#include "rway/data.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iterator>

#include "rway/error.hpp"
#include "rway/rng.hpp"

namespace rway {

std::vector<std::size_t> encode_bytes(std::string_view text) {
  std::vector<std::size_t> out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) out[i] = static_cast<unsigned char>(text[i]);
  return out;
}

std::string decode_bytes(std::span<const std::size_t> tokens) {
  std::string out(tokens.size(), '\0');
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= kByteVocab) {
      throw InputError("token " + std::to_string(tokens[i]) + " is not a byte");
    }
    out[i] = static_cast<char>(tokens[i]);
  }
  return out;
}

std::vector<std::size_t> load_tokens(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read data file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::size_t> tokens;
  if (path.extension() == ".ids") {
    const char* p = text.data();
    const char* end = p + text.size();
    while (p < end) {
      if (std::isspace(static_cast<unsigned char>(*p))) {
        ++p;
        continue;
      }
      std::size_t id = 0;
      auto [next, ec] = std::from_chars(p, end, id);
      if (ec != std::errc() || (next < end && !std::isspace(static_cast<unsigned char>(*next)))) {
        throw InputError("malformed token id in " + path.string() + " at byte " +
                         std::to_string(p - text.data()));
      }
      tokens.push_back(id);
      p = next;
    }
  } else {
    tokens = encode_bytes(text);
  }
  if (tokens.empty()) throw InputError("data file " + path.string() + " is empty");
  return tokens;
}

DataSplit split_tokens(std::span<const std::size_t> tokens, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1)");
  }
  const auto val = static_cast<std::size_t>(static_cast<double>(tokens.size()) * val_fraction);
  const std::size_t cut = tokens.size() - val;
  return {{tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(cut)},
          {tokens.begin() + static_cast<std::ptrdiff_t>(cut), tokens.end()}};
}

namespace {

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[rng.uniform_int(N)];
}

}  // namespace

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 12> subjects{
      "the cat", "a small dog", "the old man", "my sister", "the teacher", "a young bird",
      "the farmer", "our neighbor", "the river", "a quiet child", "the baker", "the captain"};
  static constexpr std::array<std::string_view, 10> verbs{
      "sees", "likes", "follows", "carries", "finds", "watches", "paints", "visits", "keeps",
      "remembers"};
  static constexpr std::array<std::string_view, 12> objects{
      "the red ball", "a green hat", "the long road", "an apple", "the blue door",
      "a wooden box", "the bright moon", "a warm loaf", "the garden", "a paper boat",
      "the north wind", "an old song"};
  static constexpr std::array<std::string_view, 8> tails{
      "in the morning", "after dinner", "near the hill", "every day", "by the sea",
      "with great care", "before the rain", "at the market"};

  Rng rng = Rng(seed).split("synthetic_corpus");
  std::string out;
  out.reserve(bytes + 128);
  while (out.size() < bytes) {
    std::string sentence(pick(rng, subjects));
    sentence += ' ';
    sentence += pick(rng, verbs);
    sentence += ' ';
    sentence += pick(rng, objects);
    if (rng.uniform() < 0.5) {
      sentence += ' ';
      sentence += pick(rng, tails);
    }
    sentence[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence[0])));
    out += sentence;
    out += rng.uniform() < 0.15 ? ".\n" : ". ";
  }
  out.resize(bytes);
  return out;
}

}  // namespace rway
