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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "chanprune/model_ir.hpp"

namespace chanprune {

/// Output channel counts of the prunable layers (layer id -> c'). Layers
/// that are absent keep their original count.
struct ChannelConfig {
  std::map<std::string, std::int64_t> channels;

  bool operator==(const ChannelConfig&) const = default;
};

/// Original channel count of every prunable layer.
ChannelConfig original_config(const ModelSnapshot& s);

/// Throws ConfigError unless 0 < c' <= c for every entry and every entry
/// names a prunable layer.
void check_config(const ModelSnapshot& s, const ChannelConfig& cfg);

struct LayerCost {
  std::int64_t flops = 0;
  std::int64_t params = 0;
  bool operator==(const LayerCost&) const = default;
};

/// FLOPs are multiply-accumulates; BN, activations, pooling and residual
/// adds cost nothing. Params count conv/FC weights and biases plus BN
/// gamma and beta.
struct CostReport {
  std::int64_t flops = 0;
  std::int64_t params = 0;
  std::map<std::string, LayerCost> per_layer;
  /// Output resolution (H, W) per layer.
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> spatial;
};

CostReport evaluate_cost(const ModelSnapshot& s, const ChannelConfig& cfg);
CostReport baseline_cost(const ModelSnapshot& s);

/// Total FLOPs only; skips building the per-layer maps.
std::int64_t total_flops(const ModelSnapshot& s, const ChannelConfig& cfg);

/// FLOPs with fractional channel counts (no rounding): the continuous
/// relaxation of the cost polynomial. Keys are prunable layer ids.
double relaxed_flops(const ModelSnapshot& s, const std::map<std::string, double>& channels);

}  // namespace chanprune
