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

#include "chanprune/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "chanprune/bisection.hpp"
#include "chanprune/error.hpp"

namespace chanprune {

namespace {

constexpr int kMaxWidening = 20;

std::vector<double> scaled(const ImportanceVector& importance, double alpha) {
  std::vector<double> r;
  r.reserve(importance.entries.size());
  for (const auto& e : importance.entries) r.push_back(alpha * e.importance);
  return r;
}

void check_alignment(const ModelSnapshot& s, const ImportanceVector& importance) {
  if (importance.entries.size() != s.blocks.size()) {
    throw ConfigError("importance vector has " + std::to_string(importance.entries.size()) +
                      " entries but the model has " + std::to_string(s.blocks.size()) + " blocks");
  }
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    if (importance.entries[i].block_id != s.blocks[i].id) {
      throw ConfigError("importance entry '" + importance.entries[i].block_id +
                        "' does not match block '" + s.blocks[i].id + "'");
    }
  }
}

}  // namespace

ChannelConfig ratios_to_config(const ModelSnapshot& s, std::span<const double> keep_ratios) {
  if (keep_ratios.size() != s.blocks.size()) {
    throw ConfigError("expected " + std::to_string(s.blocks.size()) + " keep ratios, got " +
                      std::to_string(keep_ratios.size()));
  }
  ChannelConfig cfg = original_config(s);
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    const double r = std::min(std::max(keep_ratios[i], 0.0), 1.0);
    for (const auto& id : s.blocks[i].internal_prunable_layer_ids) {
      const std::int64_t c = s.layer(id).out_channels;
      const auto rounded = static_cast<std::int64_t>(std::floor(static_cast<double>(c) * r + 0.5));
      cfg.channels[id] = std::clamp<std::int64_t>(rounded, 1, c);
    }
  }
  return cfg;
}

std::int64_t monotone_cost(const ModelSnapshot& s, const ImportanceVector& importance, double alpha) {
  check_alignment(s, importance);
  return total_flops(s, ratios_to_config(s, scaled(importance, alpha)));
}

double relaxed_monotone_cost(const ModelSnapshot& s, const ImportanceVector& importance, double alpha) {
  check_alignment(s, importance);
  std::map<std::string, double> channels;
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    const double r = std::min(std::max(alpha * importance.entries[i].importance, 0.0), 1.0);
    for (const auto& id : s.blocks[i].internal_prunable_layer_ids) {
      channels[id] = static_cast<double>(s.layer(id).out_channels) * r;
    }
  }
  return relaxed_flops(s, channels);
}

PruningPlan bisect_alpha(const ModelSnapshot& s, const ImportanceVector& importance,
                         const Budget& budget) {
  check_alignment(s, importance);
  if (!(budget.tolerance > 0.0)) throw ConfigError("budget tolerance must be > 0");
  if (!(budget.interval_lo > 0.0) || !(budget.interval_lo < budget.interval_hi)) {
    throw ConfigError("budget interval must satisfy 0 < lo < hi");
  }
  if (budget.max_iters < 1) throw ConfigError("budget max_iters must be >= 1");

  const ChannelConfig original = original_config(s);
  const std::int64_t baseline = total_flops(s, original);
  double target = budget.target;
  if (budget.kind == Budget::Kind::fraction_of_baseline) {
    if (!(budget.target > 0.0) || budget.target > 1.0) {
      throw ConfigError("budget target ratio must be in (0, 1], got " + std::to_string(budget.target));
    }
    target = budget.target * static_cast<double>(baseline);
  } else if (!(budget.target > 0.0)) {
    throw ConfigError("budget target FLOPs must be > 0");
  }

  PruningPlan plan;
  plan.baseline_flops = baseline;
  plan.target_flops = target;
  plan.tolerance = budget.tolerance;
  for (const auto& b : s.blocks) plan.block_ids.push_back(b.id);

  auto finish = [&](double alpha) {
    plan.alpha = alpha;
    plan.keep_ratios = scaled(importance, alpha);
    for (auto& r : plan.keep_ratios) r = std::min(r, 1.0);
    plan.config = ratios_to_config(s, plan.keep_ratios);
    plan.achieved = evaluate_cost(s, plan.config);
    const double miss = std::fabs(static_cast<double>(plan.achieved.flops) - target);
    plan.nearest_achievable = !plan.identity && miss > budget.tolerance * target;
    return plan;
  };

  if (target >= static_cast<double>(baseline)) {
    double min_positive = std::numeric_limits<double>::infinity();
    for (const auto& e : importance.entries) {
      if (e.importance > 0.0) min_positive = std::min(min_positive, e.importance);
    }
    plan.identity = true;
    plan.alpha = std::isfinite(min_positive) ? 1.0 / min_positive : budget.interval_hi;
    plan.alpha_upper = plan.alpha;
    plan.keep_ratios.assign(s.blocks.size(), 1.0);
    plan.config = original;
    plan.achieved = evaluate_cost(s, plan.config);
    return plan;
  }

  auto f = [&](double alpha) {
    return static_cast<double>(monotone_cost(s, importance, alpha)) - target;
  };

  double lo = budget.interval_lo;
  double hi = budget.interval_hi;
  double f_lo = f(lo);
  for (int i = 0; f_lo > 0.0 && i < kMaxWidening; ++i) {
    lo *= 0.5;
    f_lo = f(lo);
  }
  if (f_lo > 0.0) {
    throw ConfigError("budget of " + std::to_string(static_cast<std::int64_t>(target)) +
                      " FLOPs cannot be bracketed: the minimum reachable cost is " +
                      std::to_string(static_cast<std::int64_t>(f_lo + target)) + " FLOPs");
  }
  double f_hi = f(hi);
  for (int i = 0; f_hi <= 0.0 && i < kMaxWidening; ++i) {
    lo = hi;
    f_lo = f_hi;
    hi *= 2.0;
    f_hi = f(hi);
  }
  if (f_hi <= 0.0) {
    // Every alpha in reach stays under the target: the largest one wins.
    plan.alpha_upper = hi;
    return finish(hi);
  }

  BisectionOptions options;
  options.max_iters = budget.max_iters;
  const auto result = bisect_nondecreasing(f, lo, hi, f_lo, f_hi, options);
  plan.iterations = result.iterations;
  plan.alpha_upper = result.bracket.hi;
  return finish(result.x);
}

}  // namespace chanprune
