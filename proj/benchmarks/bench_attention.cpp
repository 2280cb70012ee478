// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "rway/attention.hpp"
#include "rway/rewiring.hpp"
#include "rway/rng.hpp"

using namespace rway;

namespace {

struct Setup {
  AttentionConfig cfg;
  AttentionWeights w;
  Tensor x;
};

Setup make_setup(std::size_t n, std::size_t heads) {
  Rng rng(3);
  const std::size_t dm = 64 * heads;
  auto mat = [&] { return Tensor::randn({dm, dm}, rng, 0.02); };
  auto vec = [&] { return Tensor::zeros({dm}); };
  return {AttentionConfig{heads, dm, 10000.0},
          {mat(), vec(), mat(), vec(), mat(), vec(), mat(), vec()},
          Tensor::randn({n, dm}, rng)};
}

}  // namespace

static void BM_StandardAttention(benchmark::State& state) {
  const auto s = make_setup(static_cast<std::size_t>(state.range(0)), 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(causal_attention(s.x, s.w, s.cfg).out);
}
BENCHMARK(BM_StandardAttention)->Arg(128)->Arg(256);

static void BM_RewiredDotAttention(benchmark::State& state) {
  const auto s = make_setup(static_cast<std::size_t>(state.range(0)), 2);
  NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rewired_attention(s.x, s.w, s.cfg, RewiringMode{}).out);
  }
}
BENCHMARK(BM_RewiredDotAttention)->Arg(128)->Arg(256);
