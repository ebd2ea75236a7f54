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

#include "chanprune/importance.hpp"

#include <algorithm>
#include <cmath>

#include "chanprune/error.hpp"

namespace chanprune {

std::vector<double> ImportanceVector::values() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.importance);
  return out;
}

ImportanceVector block_importance(const ModelSnapshot& s) {
  ImportanceVector v;
  double total = 0.0;
  for (const auto& b : s.blocks) {
    if (b.prunable_bn_ids.empty()) {
      throw FormatError("block '" + b.id + "' has no prunable batch_norm layer");
    }
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& bn : b.prunable_bn_ids) {
      const auto name = tensor_name(bn, kGammaSuffix);
      if (!s.has_tensor(name)) {
        throw FormatError("block '" + b.id + "' is missing gamma tensor '" + name + "'");
      }
      for (float g : s.tensor(name).values()) sum += std::fabs(static_cast<double>(g));
      count += s.tensor(name).numel();
    }
    if (count == 0) throw FormatError("block '" + b.id + "' has empty gamma tensors");
    const double mean = sum / static_cast<double>(count);
    v.entries.push_back({b.id, mean, 0.0});
    total += mean;
  }
  if (v.entries.empty()) return v;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericError("block importance undefined: every block has all-zero gamma");
  }
  for (auto& e : v.entries) e.importance = e.mean_abs_gamma / total;
  return v;
}

double importance_spread(const ImportanceVector& v) {
  if (v.entries.size() < 2) return 0.0;
  auto [lo, hi] = std::minmax_element(v.entries.begin(), v.entries.end(),
                                      [](const auto& a, const auto& b) { return a.importance < b.importance; });
  return hi->importance - lo->importance;
}

}  // namespace chanprune
