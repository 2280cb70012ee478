// SPDX-License-Identifier: Apache-2.0
#include "rway/passkey.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rway/data.hpp"
#include "rway/error.hpp"
#include "rway/parallel.hpp"
#include "rway/rng.hpp"

namespace rway {

std::vector<double> TransformerLM::next_token_logits(std::span<const std::size_t> context) const {
  NoGradGuard no_grad;
  const auto res = model_.forward(context);
  const std::size_t n = res.logits.dim(0), v = res.logits.dim(1);
  const auto last = res.logits.data().subspan((n - 1) * v, v);
  return {last.begin(), last.end()};
}

std::vector<double> RandomDigitStub::next_token_logits(std::span<const std::size_t> context) const {
  const std::uint64_t h = fnv1a64(context.data(), context.size() * sizeof(std::size_t), seed_);
  Rng rng(h);
  std::vector<double> logits(256, 0.0);
  logits['0' + rng.uniform_int(10)] = 1.0;
  return logits;
}

std::vector<double> OracleStub::next_token_logits(std::span<const std::size_t> context) const {
  const std::string text = decode_bytes(context);
  std::vector<double> logits(256, 0.0);
  const auto needle = text.find(kPasskeyPrompt);
  const auto prompt = text.rfind(kPasskeyPrompt);
  if (needle == std::string::npos || needle == prompt) return logits;
  const std::size_t emitted = text.size() - (prompt + kPasskeyPrompt.size());
  const std::size_t at = needle + kPasskeyPrompt.size() + emitted;
  if (emitted < kPasskeyDigits && at < text.size()) {
    logits[static_cast<unsigned char>(text[at])] = 1.0;
  }
  return logits;
}

std::string passkey_needle(std::string_view passkey) {
  return std::string(kPasskeyPrompt) + std::string(passkey) + ". ";
}

std::string random_passkey(Rng& rng) {
  std::string key(kPasskeyDigits, '0');
  for (auto& c : key) c = static_cast<char>('0' + rng.uniform_int(10));
  return key;
}

PasskeyPrompt build_passkey_prompt(std::span<const std::size_t> filler, std::size_t seq_len,
                                   double depth, std::string_view passkey,
                                   std::size_t filler_offset) {
  if (!(depth >= 0.0 && depth <= 1.0)) throw DomainError("needle depth must lie in [0, 1]");
  const auto needle = encode_bytes(passkey_needle(passkey));
  const auto prompt = encode_bytes(kPasskeyPrompt);
  if (seq_len < needle.size() + prompt.size()) {
    throw InputError("seq_len " + std::to_string(seq_len) + " cannot hold needle (" +
                     std::to_string(needle.size()) + ") and prompt (" +
                     std::to_string(prompt.size()) + ")");
  }
  const std::size_t haystack = seq_len - needle.size() - prompt.size();
  if (filler_offset + haystack > filler.size()) {
    throw InputError("filler holds " + std::to_string(filler.size()) + " tokens, need " +
                     std::to_string(filler_offset + haystack));
  }
  PasskeyPrompt out;
  out.needle_start = static_cast<std::size_t>(std::llround(depth * static_cast<double>(haystack)));
  out.needle_len = needle.size();
  out.prompt_len = prompt.size();
  const auto fill = filler.subspan(filler_offset, haystack);
  out.tokens.reserve(seq_len);
  out.tokens.insert(out.tokens.end(), fill.begin(), fill.begin() + static_cast<std::ptrdiff_t>(out.needle_start));
  out.tokens.insert(out.tokens.end(), needle.begin(), needle.end());
  out.tokens.insert(out.tokens.end(), fill.begin() + static_cast<std::ptrdiff_t>(out.needle_start), fill.end());
  out.tokens.insert(out.tokens.end(), prompt.begin(), prompt.end());
  return out;
}

std::vector<std::size_t> greedy_decode(const LanguageModel& lm,
                                       std::span<const std::size_t> prompt, std::size_t count) {
  std::vector<std::size_t> context(prompt.begin(), prompt.end());
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < count; ++k) {
    const auto logits = lm.next_token_logits(context);
    const auto best = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    out.push_back(best);
    context.push_back(best);
  }
  return out;
}

bool passkey_exact_match(std::string_view predicted, std::string_view passkey) {
  return predicted == passkey;
}

namespace {

std::string printable(std::span<const std::size_t> tokens) {
  std::string s;
  for (auto t : tokens) s += (t >= 0x20 && t < 0x7f) ? static_cast<char>(t) : '?';
  return s;
}

}  // namespace

std::vector<PasskeyTrial> run_passkey(const LanguageModel& lm,
                                      std::span<const std::size_t> filler,
                                      std::span<const std::size_t> seq_lens,
                                      std::span<const double> depths, std::size_t trials,
                                      std::uint64_t seed) {
  std::vector<PasskeyTrial> out;
  std::vector<PasskeyPrompt> prompts;
  const Rng root = Rng(seed).split("passkey");
  for (auto len : seq_lens) {
    for (std::size_t di = 0; di < depths.size(); ++di) {
      for (std::size_t t = 0; t < trials; ++t) {
        Rng rng = root.split(len).split(di).split(t);
        PasskeyTrial trial;
        trial.seq_len = len;
        trial.depth = depths[di];
        trial.trial = t;
        trial.passkey = random_passkey(rng);
        const std::size_t fixed = passkey_needle(trial.passkey).size() + kPasskeyPrompt.size();
        const std::size_t haystack = len > fixed ? len - fixed : 0;
        const std::size_t slack = filler.size() > haystack ? filler.size() - haystack : 0;
        const std::size_t offset = slack > 0 ? rng.uniform_int(slack + 1) : 0;
        prompts.push_back(build_passkey_prompt(filler, len, depths[di], trial.passkey, offset));
        trial.needle_start = prompts.back().needle_start;
        trial.needle_end = trial.needle_start + prompts.back().needle_len;
        out.push_back(std::move(trial));
      }
    }
  }
  parallel_for(out.size(), [&](std::size_t i) {
    const auto decoded = greedy_decode(lm, prompts[i].tokens, kPasskeyDigits);
    out[i].predicted = printable(decoded);
    out[i].exact = passkey_exact_match(out[i].predicted, out[i].passkey);
  });
  return out;
}

std::vector<PasskeyCell> passkey_accuracy(std::span<const PasskeyTrial> trials) {
  std::map<std::pair<std::size_t, double>, std::pair<std::size_t, std::size_t>> cells;
  std::vector<std::pair<std::size_t, double>> order;
  for (const auto& t : trials) {
    const auto key = std::make_pair(t.seq_len, t.depth);
    auto [it, inserted] = cells.try_emplace(key, 0, 0);
    if (inserted) order.push_back(key);
    it->second.first += 1;
    it->second.second += t.exact ? 1 : 0;
  }
  std::vector<PasskeyCell> out;
  for (const auto& key : order) {
    const auto [count, hits] = cells.at(key);
    out.push_back({key.first, key.second, count,
                   static_cast<double>(hits) / static_cast<double>(count)});
  }
  return out;
}

}  // namespace rway
