// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "rway/ops.hpp"
#include "rway/rng.hpp"
#include "rway/tensor.hpp"

using namespace rway;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = Tensor::randn({n, n}, rng);
  const Tensor b = Tensor::randn({n, n}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_CausalSoftmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor x = Tensor::randn({n, n}, rng);
  const Mask mask = Mask::causal(n);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(x, mask));
}
BENCHMARK(BM_CausalSoftmax)->Arg(128)->Arg(512);
