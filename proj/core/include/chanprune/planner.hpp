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
#include <span>
#include <string>
#include <vector>

#include "chanprune/cost_model.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/model_ir.hpp"

namespace chanprune {

struct Budget {
  enum class Kind { fraction_of_baseline, absolute_flops };

  Kind kind = Kind::fraction_of_baseline;
  double target = 0.5;
  /// Relative FLOPs tolerance (fraction of the target).
  double tolerance = 0.01;
  double interval_lo = 0.01;
  double interval_hi = 100.0;
  int max_iters = 200;

  static Budget fraction(double ratio) {
    Budget b;
    b.target = ratio;
    return b;
  }
  static Budget absolute(std::int64_t flops) {
    Budget b;
    b.kind = Kind::absolute_flops;
    b.target = static_cast<double>(flops);
    return b;
  }
};

struct PruningPlan {
  /// Proportionality factor: keep ratio of block i is alpha * I_i.
  double alpha = 1.0;
  /// Smallest alpha known to exceed the target (bracket upper end).
  double alpha_upper = 1.0;
  std::vector<std::string> block_ids;
  /// min(alpha * I_i, 1) per block.
  std::vector<double> keep_ratios;
  ChannelConfig config;
  CostReport achieved;
  std::int64_t baseline_flops = 0;
  double target_flops = 0.0;
  double tolerance = 0.01;
  int iterations = 0;
  /// Rounding made the tolerance band unreachable; config is the closest
  /// one at or below the target.
  bool nearest_achievable = false;
  bool identity = false;

  double achieved_ratio() const {
    return baseline_flops == 0 ? 1.0
                               : static_cast<double>(achieved.flops) / static_cast<double>(baseline_flops);
  }
};

/// c' = clamp(round_half_up(c * min(R, 1)), 1, c) for each internal
/// prunable layer of block i; keep_ratios aligns with s.blocks.
ChannelConfig ratios_to_config(const ModelSnapshot& s, std::span<const double> keep_ratios);

/// Total FLOPs of the configuration produced by keep ratios alpha * I.
std::int64_t monotone_cost(const ModelSnapshot& s, const ImportanceVector& importance, double alpha);

/// Same mapping without rounding or the one-channel floor.
double relaxed_monotone_cost(const ModelSnapshot& s, const ImportanceVector& importance, double alpha);

/// Searches alpha by bisection so the pruned FLOPs meet the budget.
///
/// The interval is widened (halving lo / doubling hi, up to 20 times each)
/// until it brackets the target. Bisection then converges on the largest
/// alpha whose cost stays at or below the target; the plan is flagged
/// nearest_achievable when that cost is outside the tolerance band.
/// Throws ConfigError for an invalid budget or when the target lies below
/// the one-channel-per-layer floor.
PruningPlan bisect_alpha(const ModelSnapshot& s, const ImportanceVector& importance,
                         const Budget& budget);

}  // namespace chanprune
