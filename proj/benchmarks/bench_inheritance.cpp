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

#include <vector>

#include "chanprune/inheritance.hpp"
#include "chanprune/rng.hpp"

namespace {

using namespace chanprune;

// Filters shaped like a 3x3 conv with state.range(1) input channels.
void BM_GeometricMedian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto dim = static_cast<std::size_t>(state.range(1)) * 9;
  Rng rng(3);
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  for (auto& p : pts) for (auto& v : p) v = rng.uniform(-0.2, 0.2);
  for (auto _ : state) benchmark::DoNotOptimize(geometric_median(pts));
}
BENCHMARK(BM_GeometricMedian)->Args({64, 64})->Args({256, 256})->Args({512, 512})->Unit(benchmark::kMillisecond);

void BM_TopK(benchmark::State& state) {
  Rng rng(4);
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  for (auto& v : scores) v = rng.uniform(0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(top_k(scores, state.range(0) / 2));
}
BENCHMARK(BM_TopK)->Arg(64)->Arg(512);

}  // namespace
