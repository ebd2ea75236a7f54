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

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chanprune/cost_model.hpp"
#include "chanprune/data.hpp"
#include "chanprune/model_ir.hpp"

namespace chanprune {

/// Enum order doubles as the tie-break order in adaptive selection.
enum class Criterion { l1_norm, bn_weights, geometric_median, random_init };

inline constexpr std::array<Criterion, 4> kAllCriteria{Criterion::l1_norm, Criterion::bn_weights,
                                                       Criterion::geometric_median, Criterion::random_init};

std::string_view to_string(Criterion c);
/// Accepts the enum spelling or the short CLI form (l1, bn, gm, random).
Criterion parse_criterion(std::string_view name);

struct ChannelSelection {
  /// Kept original output-channel indices per prunable layer, ascending.
  std::map<std::string, std::vector<std::int64_t>> kept;
  /// random_init: weights are redrawn instead of sliced.
  bool reinitialize = false;
};

/// Indices of the k largest scores (ties: lower index first), returned
/// ascending.
std::vector<std::int64_t> top_k(std::span<const double> scores, std::int64_t k);

struct GeometricMedianOptions {
  double tolerance = 1e-8;
  int max_iters = 1000;
};

/// Weiszfeld iteration. One point returns itself, two the midpoint.
std::vector<double> geometric_median(const std::vector<std::vector<double>>& points,
                                     const GeometricMedianOptions& options = {});

/// Keeps all but the (n - k) points closest to their geometric median;
/// among equally close points the lower index is pruned first.
std::vector<std::int64_t> keep_far_from_median(const std::vector<std::vector<double>>& points, std::int64_t k,
                                               const GeometricMedianOptions& options = {});

ChannelSelection select_channels(const ModelSnapshot& s, const ChannelConfig& cfg, Criterion crit);

ModelSnapshot build_pruned_snapshot(const ModelSnapshot& s, const ChannelConfig& cfg,
                                    const ChannelSelection& sel, std::uint64_t seed = 0);

struct CriterionResult {
  Criterion criterion = Criterion::l1_norm;
  /// Pruned and BN-recalibrated.
  ModelSnapshot snapshot;
  double accuracy = 0.0;
};

CriterionResult evaluate_criterion(const ModelSnapshot& s, const ChannelConfig& cfg, Criterion crit,
                                   const DataSlice& calib, const DataSlice& val, std::uint64_t seed = 0);

struct InheritanceOutcome {
  Criterion chosen = Criterion::l1_norm;
  ModelSnapshot snapshot;
  std::vector<std::pair<Criterion, double>> accuracies;
};

InheritanceOutcome adaptive_inherit(const ModelSnapshot& s, const ChannelConfig& cfg, const DataSlice& calib,
                                    const DataSlice& val, std::uint64_t seed = 0,
                                    std::span<const Criterion> candidates = kAllCriteria);

}  // namespace chanprune
