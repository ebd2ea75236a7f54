// Copyright 2026 The chanprune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include "chanprune/builtin_arch.hpp"
#include "chanprune/cost_model.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/planner.hpp"
#include "chanprune/rng.hpp"

namespace {

using namespace chanprune;

const char* const kArchs[] = {"vgg16", "resnet56", "mobilenetv2"};

ModelSnapshot model(std::int64_t which) {
  auto s = builtin_arch(kArchs[which], 10, {3, 32, 32}, 1);
  // Uneven gammas; all-ones would make the plan trivially uniform.
  Rng rng(7);
  for (auto& [name, t] : s.tensors) {
    if (name.ends_with(".gamma")) for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.05, 1.5));
  }
  return s;
}

void BM_TotalFlops(benchmark::State& state) {
  const auto s = model(state.range(0));
  const auto cfg = original_config(s);
  for (auto _ : state) benchmark::DoNotOptimize(total_flops(s, cfg));
  state.SetLabel(kArchs[state.range(0)]);
}
BENCHMARK(BM_TotalFlops)->DenseRange(0, 2);

void BM_MonotoneCost(benchmark::State& state) {
  const auto s = model(state.range(0));
  const auto v = block_importance(s);
  for (auto _ : state) benchmark::DoNotOptimize(monotone_cost(s, v, 3.0));
  state.SetLabel(kArchs[state.range(0)]);
}
BENCHMARK(BM_MonotoneCost)->DenseRange(0, 2);

void BM_BisectHalf(benchmark::State& state) {
  const auto s = model(state.range(0));
  const auto v = block_importance(s);
  for (auto _ : state) benchmark::DoNotOptimize(bisect_alpha(s, v, Budget::fraction(0.5)));
  state.SetLabel(kArchs[state.range(0)]);
}
BENCHMARK(BM_BisectHalf)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
