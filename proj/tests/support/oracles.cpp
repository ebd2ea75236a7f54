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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace testsupport {

using namespace chanprune;

std::map<std::string, std::int64_t> mac_oracle(const ModelSnapshot& s,
                                               const std::map<std::string, std::int64_t>& channels) {
  struct Out {
    std::int64_t c, h, w;
  };
  std::map<std::string, Out> produced;
  Out cur{s.input_shape.channels, s.input_shape.height, s.input_shape.width};
  const Out input = cur;
  std::map<std::string, std::int64_t> macs;
  for (const auto& l : s.layers) {
    Out in = cur;
    if (l.input == kNetworkInput) {
      in = input;
    } else if (!l.input.empty()) {
      in = produced.at(l.input);
    }
    Out out = in;
    std::int64_t count = 0;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::depthwise_conv: {
        const bool dw = l.kind == LayerKind::depthwise_conv;
        out.c = dw ? in.c : (channels.count(l.id) ? channels.at(l.id) : l.out_channels);
        out.h = (in.h + 2 * l.padding.h - l.kernel.h) / l.stride.h + 1;
        out.w = (in.w + 2 * l.padding.w - l.kernel.w) / l.stride.w + 1;
        const std::int64_t taps_in = dw ? 1 : in.c;
        for (std::int64_t o = 0; o < out.c; ++o)
          for (std::int64_t y = 0; y < out.h; ++y)
            for (std::int64_t x = 0; x < out.w; ++x)
              for (std::int64_t c = 0; c < taps_in; ++c)
                for (std::int64_t i = 0; i < l.kernel.h; ++i)
                  for (std::int64_t j = 0; j < l.kernel.w; ++j) ++count;
        break;
      }
      case LayerKind::max_pool:
      case LayerKind::avg_pool:
        out.h = (in.h + 2 * l.padding.h - l.kernel.h) / l.stride.h + 1;
        out.w = (in.w + 2 * l.padding.w - l.kernel.w) / l.stride.w + 1;
        break;
      case LayerKind::global_avg_pool:
        out.h = out.w = 1;
        break;
      case LayerKind::flatten:
        out = {in.c * in.h * in.w, 1, 1};
        break;
      case LayerKind::fully_connected: {
        const std::int64_t features = in.c * in.h * in.w;
        out = {channels.count(l.id) ? channels.at(l.id) : l.out_channels, 1, 1};
        for (std::int64_t o = 0; o < out.c; ++o)
          for (std::int64_t f = 0; f < features; ++f) ++count;
        break;
      }
      default:
        break;
    }
    macs[l.id] = count;
    produced[l.id] = out;
    cur = out;
  }
  return macs;
}

std::int64_t mac_oracle_total(const ModelSnapshot& s, const std::map<std::string, std::int64_t>& channels) {
  std::int64_t total = 0;
  for (const auto& [id, m] : mac_oracle(s, channels)) total += m;
  return total;
}

std::vector<std::int64_t> select_oracle(const std::vector<double>& scores, std::int64_t k) {
  std::vector<bool> taken(scores.size(), false);
  std::vector<std::int64_t> out;
  for (std::int64_t round = 0; round < k; ++round) {
    std::int64_t best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (taken[i]) continue;
      if (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<std::int64_t>(i);
    }
    taken[static_cast<std::size_t>(best)] = true;
    out.push_back(best);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double sum_distances(const std::vector<std::vector<double>>& points, const std::vector<double>& x) {
  double total = 0.0;
  for (const auto& p : points) {
    double sq = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) sq += (p[d] - x[d]) * (p[d] - x[d]);
    total += std::sqrt(sq);
  }
  return total;
}

std::vector<double> grid_median_oracle(const std::vector<std::vector<double>>& points) {
  const std::size_t dims = points.front().size();
  if (dims > 3) throw std::invalid_argument("grid oracle handles at most 3 dimensions");
  std::vector<double> lo(dims, std::numeric_limits<double>::infinity());
  std::vector<double> hi(dims, -std::numeric_limits<double>::infinity());
  for (const auto& p : points) {
    for (std::size_t d = 0; d < dims; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  }
  std::vector<double> best(dims), center(dims), half(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    center[d] = 0.5 * (lo[d] + hi[d]);
    half[d] = std::max(0.5 * (hi[d] - lo[d]), 1e-3);
  }
  // The minimum over the data points is a valid starting incumbent.
  double best_value = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    const double v = sum_distances(points, p);
    if (v < best_value) {
      best_value = v;
      best = p;
    }
  }
  constexpr int kSteps = 20;  // grid is (2*kSteps+1)^dims per level
  for (int level = 0; level < 60; ++level) {
    std::vector<double> x(dims);
    std::vector<int> idx(dims, -kSteps);
    while (true) {
      for (std::size_t d = 0; d < dims; ++d) x[d] = center[d] + half[d] * idx[d] / kSteps;
      const double v = sum_distances(points, x);
      if (v < best_value) {
        best_value = v;
        best = x;
      }
      std::size_t d = 0;
      while (d < dims && ++idx[d] > kSteps) idx[d++] = -kSteps;
      if (d == dims) break;
    }
    center = best;
    for (auto& h : half) h *= 0.25;
  }
  return best;
}

}  // namespace testsupport
