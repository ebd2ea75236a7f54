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
#include "chanprune/engine.hpp"
#include "chanprune/rng.hpp"
#include "chanprune/trainer.hpp"

namespace {

using namespace chanprune;

Tensor random_batch(std::int64_t n, const InputShape& shape) {
  Tensor x({n, shape.channels, shape.height, shape.width});
  Rng rng(1);
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return x;
}

void BM_InferVgg16(benchmark::State& state) {
  const auto s = builtin_arch("vgg16", 10, {3, 32, 32}, 1);
  const auto x = random_batch(state.range(0), s.input_shape);
  for (auto _ : state) benchmark::DoNotOptimize(infer(s, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InferVgg16)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

// One SGD-sized step: forward in train mode plus backward.
void BM_TrainStep(benchmark::State& state) {
  const char* arch = state.range(0) == 0 ? "tiny_vgg" : "resnet20";
  const auto s = builtin_arch(arch, 10, {3, 32, 32}, 1);
  const auto x = random_batch(32, s.input_shape);
  std::vector<std::int32_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 10);
  for (auto _ : state) {
    auto fr = forward(s, x, {Mode::train, false});
    Tensor g;
    (void)cross_entropy(fr.logits, labels, &g);
    benchmark::DoNotOptimize(backward(fr.cache, g));
  }
  state.SetItemsProcessed(state.iterations() * 32);
  state.SetLabel(arch);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
