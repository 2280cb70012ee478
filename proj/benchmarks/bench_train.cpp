// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "rway/data.hpp"
#include "rway/train.hpp"

using namespace rway;

static void BM_TrainStep(benchmark::State& state) {
  const auto kind = static_cast<AttentionKind>(state.range(0));
  TrainConfig tc;
  tc.batch_size = 2;
  tc.seq_len = 128;
  TrainState ts(Model(ModelConfig::from_scale(2, kind, 256, 128)), tc);
  const auto tokens = encode_bytes(synthetic_corpus(100000, 1));
  std::size_t step = 0;
  for (auto _ : state) {
    const auto batch = sample_batch(tokens, tc, step++);
    benchmark::DoNotOptimize(train_step(ts, batch, 1e-3));
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
