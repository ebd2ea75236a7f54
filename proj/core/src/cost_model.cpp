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

#include "chanprune/cost_model.hpp"

#include "chanprune/error.hpp"

namespace chanprune {

namespace {

LayerCost layer_cost(const LayerSpec& l, const LayerGeometry& g) {
  LayerCost c;
  const std::int64_t spatial = g.out_height * g.out_width;
  const std::int64_t bias = l.has_bias ? g.out_channels : 0;
  switch (l.kind) {
    case LayerKind::conv: {
      const std::int64_t kernel = g.in_channels * l.kernel.h * l.kernel.w;
      c.flops = kernel * g.out_channels * spatial;
      c.params = kernel * g.out_channels + bias;
      break;
    }
    case LayerKind::depthwise_conv:
      c.flops = g.out_channels * l.kernel.h * l.kernel.w * spatial;
      c.params = g.out_channels * l.kernel.h * l.kernel.w + bias;
      break;
    case LayerKind::fully_connected:
      c.flops = g.in_channels * g.out_channels;
      c.params = g.in_channels * g.out_channels + bias;
      break;
    case LayerKind::batch_norm:
      c.params = 2 * g.out_channels;
      break;
    default:
      break;
  }
  return c;
}

}  // namespace

ChannelConfig original_config(const ModelSnapshot& s) {
  ChannelConfig cfg;
  for (const auto& l : s.layers) {
    if (l.prunable) cfg.channels[l.id] = l.out_channels;
  }
  return cfg;
}

void check_config(const ModelSnapshot& s, const ChannelConfig& cfg) {
  for (const auto& [id, c] : cfg.channels) {
    const auto* l = s.find_layer(id);
    if (!l) throw ConfigError("channel config references unknown layer '" + id + "'");
    if (c < 1) throw ConfigError("channel config gives layer '" + id + "' zero channels");
    if (!l->prunable) {
      if (c != l->out_channels) {
        throw ConfigError("channel config changes non-prunable layer '" + id + "'");
      }
      continue;
    }
    if (c > l->out_channels) {
      throw ConfigError("channel config gives layer '" + id + "' " + std::to_string(c) +
                        " channels, more than its original " + std::to_string(l->out_channels));
    }
  }
}

CostReport evaluate_cost(const ModelSnapshot& s, const ChannelConfig& cfg) {
  check_config(s, cfg);
  const auto geo = infer_geometry(s, cfg.channels);
  CostReport report;
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    const LayerCost c = layer_cost(l, geo[i]);
    report.flops += c.flops;
    report.params += c.params;
    report.per_layer[l.id] = c;
    report.spatial[l.id] = {geo[i].out_height, geo[i].out_width};
  }
  return report;
}

CostReport baseline_cost(const ModelSnapshot& s) { return evaluate_cost(s, original_config(s)); }

std::int64_t total_flops(const ModelSnapshot& s, const ChannelConfig& cfg) {
  check_config(s, cfg);
  const auto geo = infer_geometry(s, cfg.channels);
  std::int64_t flops = 0;
  for (std::size_t i = 0; i < s.layers.size(); ++i) flops += layer_cost(s.layers[i], geo[i]).flops;
  return flops;
}

double relaxed_flops(const ModelSnapshot& s, const std::map<std::string, double>& channels) {
  // Spatial geometry does not depend on channel counts, so reuse it and
  // propagate fractional channels along the graph.
  const auto geo = infer_geometry(s);
  const auto topo = resolve_topology(s);
  std::vector<double> out(s.layers.size());
  const double input_channels = static_cast<double>(s.input_shape.channels);
  double flops = 0.0;
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    const int src = topo.input[i];
    const double in = src < 0 ? input_channels : out[static_cast<std::size_t>(src)];
    const double spatial = static_cast<double>(geo[i].out_height * geo[i].out_width);
    const double in_spatial = src < 0 ? static_cast<double>(s.input_shape.height * s.input_shape.width)
                                      : static_cast<double>(geo[static_cast<std::size_t>(src)].out_height *
                                                            geo[static_cast<std::size_t>(src)].out_width);
    double c = in;
    switch (l.kind) {
      case LayerKind::conv: {
        auto it = channels.find(l.id);
        c = it == channels.end() ? static_cast<double>(l.out_channels) : it->second;
        flops += in * c * static_cast<double>(l.kernel.h * l.kernel.w) * spatial;
        break;
      }
      case LayerKind::depthwise_conv:
        flops += in * static_cast<double>(l.kernel.h * l.kernel.w) * spatial;
        break;
      case LayerKind::flatten:
        c = in * in_spatial;
        break;
      case LayerKind::fully_connected:
        c = static_cast<double>(l.out_channels);
        flops += in * in_spatial * c;
        break;
      default:
        break;
    }
    out[i] = c;
  }
  return flops;
}

}  // namespace chanprune
