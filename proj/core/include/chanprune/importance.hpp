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

#include <string>
#include <vector>

#include "chanprune/model_ir.hpp"

namespace chanprune {

struct BlockImportance {
  std::string block_id;
  /// Mean |gamma| over the block's prunable BN layers.
  double mean_abs_gamma = 0.0;
  /// mean_abs_gamma normalized over all blocks.
  double importance = 0.0;
};

/// One entry per block, in block order; importances sum to 1.
struct ImportanceVector {
  std::vector<BlockImportance> entries;

  std::vector<double> values() const;
};

/// Scores every block by the mean absolute BN scaling factor of its
/// prunable BN layers, normalized to sum to one. Throws NumericError when
/// every block's gamma is zero, FormatError when a block has no BN.
ImportanceVector block_importance(const ModelSnapshot& s);

/// max_i I_i - min_i I_i; zero for empty or single-block vectors.
double importance_spread(const ImportanceVector& v);

}  // namespace chanprune
