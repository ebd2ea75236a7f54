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

#include "chanprune/model_ir.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "chanprune/error.hpp"

namespace chanprune {

using nlohmann::json;

namespace {

constexpr std::pair<LayerKind, std::string_view> kLayerKindNames[] = {
    {LayerKind::conv, "conv"},
    {LayerKind::depthwise_conv, "depthwise_conv"},
    {LayerKind::batch_norm, "batch_norm"},
    {LayerKind::relu, "relu"},
    {LayerKind::relu6, "relu6"},
    {LayerKind::max_pool, "max_pool"},
    {LayerKind::avg_pool, "avg_pool"},
    {LayerKind::global_avg_pool, "global_avg_pool"},
    {LayerKind::fully_connected, "fully_connected"},
    {LayerKind::add_residual, "add_residual"},
    {LayerKind::flatten, "flatten"},
};

constexpr std::pair<BlockKind, std::string_view> kBlockKindNames[] = {
    {BlockKind::plain, "plain"},
    {BlockKind::residual, "residual"},
    {BlockKind::inverted_residual, "inverted_residual"},
};

bool is_spatial_kind(LayerKind k) {
  return k == LayerKind::conv || k == LayerKind::depthwise_conv || k == LayerKind::max_pool ||
         k == LayerKind::avg_pool;
}

std::int64_t window_out(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  const std::int64_t span = in + 2 * p - k;
  if (span < 0) return 0;
  return span / s + 1;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (auto& [k, name] : kLayerKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto& [k, n] : kLayerKindNames) {
    if (n == name) return k;
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(BlockKind kind) {
  for (auto& [k, name] : kBlockKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

BlockKind parse_block_kind(std::string_view name) {
  for (auto& [k, n] : kBlockKindNames) {
    if (n == name) return k;
  }
  throw FormatError("unknown block kind '" + std::string(name) + "'");
}

const LayerSpec* ModelSnapshot::find_layer(std::string_view id) const {
  for (const auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

const LayerSpec& ModelSnapshot::layer(std::string_view id) const {
  if (const auto* l = find_layer(id)) return *l;
  throw FormatError("dangling layer id '" + std::string(id) + "'");
}

std::optional<std::size_t> ModelSnapshot::layer_index(std::string_view id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  return std::nullopt;
}

const BlockSpec& ModelSnapshot::block(std::string_view id) const {
  for (const auto& b : blocks) {
    if (b.id == id) return b;
  }
  throw FormatError("unknown block id '" + std::string(id) + "'");
}

const Tensor& ModelSnapshot::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("missing tensor '" + name + "'");
  return it->second;
}

Tensor& ModelSnapshot::tensor(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("missing tensor '" + name + "'");
  return it->second;
}

bool snapshots_equal(const ModelSnapshot& a, const ModelSnapshot& b) {
  if (a.format_version != b.format_version || a.arch_name != b.arch_name ||
      a.input_shape != b.input_shape || a.num_classes != b.num_classes || a.blocks != b.blocks ||
      a.layers != b.layers || a.tensors.size() != b.tensors.size()) {
    return false;
  }
  for (const auto& [name, t] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end() || !t.bitwise_equal(it->second)) return false;
  }
  return true;
}

Topology resolve_topology(const ModelSnapshot& s) {
  Topology topo;
  topo.input.resize(s.layers.size());
  topo.skip.assign(s.layers.size(), -2);
  std::map<std::string_view, int> seen;
  auto resolve = [&](const LayerSpec& l, const std::string& ref, std::string_view field) -> int {
    if (ref == kNetworkInput) return -1;
    auto it = seen.find(ref);
    if (it == seen.end()) {
      throw FormatError("dangling layer id '" + ref + "' in " + std::string(field) + " of layer '" +
                        l.id + "' (must name an earlier layer)");
    }
    return it->second;
  };
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    if (l.input.empty()) {
      topo.input[i] = static_cast<int>(i) - 1;
    } else {
      topo.input[i] = resolve(l, l.input, "input");
    }
    if (l.kind == LayerKind::add_residual) {
      if (l.skip.empty()) throw FormatError("add_residual layer '" + l.id + "' has no skip operand");
      topo.skip[i] = resolve(l, l.skip, "skip");
    } else if (!l.skip.empty()) {
      throw FormatError("layer '" + l.id + "' declares a skip operand but is not add_residual");
    }
    if (!seen.emplace(l.id, static_cast<int>(i)).second) {
      throw FormatError("duplicate layer id '" + l.id + "'");
    }
  }
  return topo;
}

std::vector<LayerGeometry> infer_geometry(const ModelSnapshot& s,
                                          const std::map<std::string, std::int64_t>& out_channels) {
  const Topology topo = resolve_topology(s);
  std::vector<LayerGeometry> geo(s.layers.size());
  const LayerGeometry input{0, 0, 0, s.input_shape.channels, s.input_shape.height, s.input_shape.width};
  auto producer = [&](int idx) -> const LayerGeometry& { return idx < 0 ? input : geo[idx]; };

  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    const auto& in = producer(topo.input[i]);
    auto& g = geo[i];
    g.in_channels = in.out_channels;
    g.in_height = in.out_height;
    g.in_width = in.out_width;
    g.out_channels = in.out_channels;
    g.out_height = in.out_height;
    g.out_width = in.out_width;
    auto declared_out = [&]() {
      auto it = out_channels.find(l.id);
      return it == out_channels.end() ? l.out_channels : it->second;
    };
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::depthwise_conv:
      case LayerKind::max_pool:
      case LayerKind::avg_pool:
        if (l.kernel.h < 1 || l.kernel.w < 1 || l.stride.h < 1 || l.stride.w < 1 ||
            l.padding.h < 0 || l.padding.w < 0) {
          throw ShapeError("layer '" + l.id + "' has invalid kernel/stride/padding");
        }
        g.out_height = window_out(in.out_height, l.kernel.h, l.stride.h, l.padding.h);
        g.out_width = window_out(in.out_width, l.kernel.w, l.stride.w, l.padding.w);
        if (g.out_height < 1 || g.out_width < 1) {
          throw ShapeError("layer '" + l.id + "' produces an empty spatial output");
        }
        if (l.kind == LayerKind::conv) g.out_channels = declared_out();
        break;
      case LayerKind::global_avg_pool:
        g.out_height = 1;
        g.out_width = 1;
        break;
      case LayerKind::flatten:
        g.out_channels = in.out_channels * in.out_height * in.out_width;
        g.out_height = 1;
        g.out_width = 1;
        break;
      case LayerKind::fully_connected:
        g.in_channels = in.out_channels * in.out_height * in.out_width;
        g.in_height = 1;
        g.in_width = 1;
        g.out_channels = declared_out();
        g.out_height = 1;
        g.out_width = 1;
        break;
      case LayerKind::add_residual: {
        const auto& other = producer(topo.skip[i]);
        if (other.out_channels != in.out_channels || other.out_height != in.out_height ||
            other.out_width != in.out_width) {
          throw ShapeError("add_residual '" + l.id + "' operands differ in shape: (" +
                           std::to_string(in.out_channels) + "," + std::to_string(in.out_height) +
                           "," + std::to_string(in.out_width) + ") vs (" +
                           std::to_string(other.out_channels) + "," +
                           std::to_string(other.out_height) + "," +
                           std::to_string(other.out_width) + ")");
        }
        break;
      }
      case LayerKind::batch_norm:
      case LayerKind::relu:
      case LayerKind::relu6:
        break;
    }
    if (g.out_channels < 1) {
      throw ShapeError("layer '" + l.id + "' has no output channels");
    }
  }
  return geo;
}

std::vector<std::pair<std::string, Shape>> expected_tensors(const LayerSpec& l) {
  std::vector<std::pair<std::string, Shape>> out;
  switch (l.kind) {
    case LayerKind::conv:
      out.emplace_back(tensor_name(l.id, kWeightSuffix),
                       Shape{l.out_channels, l.in_channels, l.kernel.h, l.kernel.w});
      if (l.has_bias) out.emplace_back(tensor_name(l.id, kBiasSuffix), Shape{l.out_channels});
      break;
    case LayerKind::depthwise_conv:
      out.emplace_back(tensor_name(l.id, kWeightSuffix),
                       Shape{l.out_channels, 1, l.kernel.h, l.kernel.w});
      if (l.has_bias) out.emplace_back(tensor_name(l.id, kBiasSuffix), Shape{l.out_channels});
      break;
    case LayerKind::fully_connected:
      out.emplace_back(tensor_name(l.id, kWeightSuffix), Shape{l.out_channels, l.in_channels});
      if (l.has_bias) out.emplace_back(tensor_name(l.id, kBiasSuffix), Shape{l.out_channels});
      break;
    case LayerKind::batch_norm:
      for (auto suffix : {kGammaSuffix, kBetaSuffix, kMeanSuffix, kVarSuffix}) {
        out.emplace_back(tensor_name(l.id, suffix), Shape{l.out_channels});
      }
      break;
    default:
      break;
  }
  return out;
}

void validate(const ModelSnapshot& s) {
  if (s.format_version != kFormatVersion) {
    throw FormatError("unsupported format_version " + std::to_string(s.format_version));
  }
  if (s.input_shape.channels < 1 || s.input_shape.height < 1 || s.input_shape.width < 1) {
    throw ShapeError("input_shape dimensions must be >= 1");
  }
  for (const auto& l : s.layers) {
    if (l.id.empty()) throw FormatError("layer with empty id");
    if (l.in_channels < 1 || l.out_channels < 1) {
      throw ShapeError("layer '" + l.id + "' must have in/out channels >= 1");
    }
    if (l.kernel.h < 1 || l.kernel.w < 1 || l.stride.h < 1 || l.stride.w < 1) {
      throw ShapeError("layer '" + l.id + "' kernel/stride dims must be >= 1");
    }
    if (l.padding.h < 0 || l.padding.w < 0) {
      throw ShapeError("layer '" + l.id + "' padding must be >= 0");
    }
    if (l.kind == LayerKind::depthwise_conv && l.in_channels != l.out_channels) {
      throw ShapeError("depthwise_conv '" + l.id + "' must have out_channels == in_channels");
    }
    if (l.prunable && l.kind != LayerKind::conv) {
      throw FormatError("layer '" + l.id + "' is marked prunable but is not a conv layer");
    }
    if (l.kind == LayerKind::batch_norm && !(l.epsilon >= 0.0 && std::isfinite(l.epsilon))) {
      throw FormatError("batch_norm '" + l.id + "' has invalid epsilon");
    }
  }

  const auto geo = infer_geometry(s);
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    if (geo[i].in_channels != l.in_channels || geo[i].out_channels != l.out_channels) {
      throw ShapeError("layer '" + l.id + "' declares " + std::to_string(l.in_channels) + "->" +
                       std::to_string(l.out_channels) + " channels but its input implies " +
                       std::to_string(geo[i].in_channels) + "->" +
                       std::to_string(geo[i].out_channels));
    }
  }
  if (!s.layers.empty()) {
    const auto& last = geo.back();
    if (last.out_channels * last.out_height * last.out_width != s.num_classes) {
      throw ShapeError("network output has " +
                       std::to_string(last.out_channels * last.out_height * last.out_width) +
                       " features but num_classes is " + std::to_string(s.num_classes));
    }
  }

  // Weights: every expected tensor present with the implied shape, nothing extra.
  std::set<std::string> expected_names;
  for (const auto& l : s.layers) {
    for (const auto& [name, shape] : expected_tensors(l)) {
      expected_names.insert(name);
      auto it = s.tensors.find(name);
      if (it == s.tensors.end()) {
        throw FormatError("layer '" + l.id + "' is missing tensor '" + name + "'");
      }
      if (it->second.shape() != shape) {
        throw ShapeError("tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                         ", expected " + shape_to_string(shape));
      }
    }
    if (l.kind == LayerKind::batch_norm) {
      for (float v : s.tensor(tensor_name(l.id, kVarSuffix)).values()) {
        if (!(v > 0.0f)) throw FormatError("batch_norm '" + l.id + "' has running_var <= 0");
      }
    }
  }
  for (const auto& [name, t] : s.tensors) {
    if (!expected_names.count(name)) {
      throw FormatError("tensor '" + name + "' does not belong to any layer");
    }
  }

  // Blocks.
  std::set<std::string> block_ids;
  std::set<std::string> covered_prunable;
  for (const auto& b : s.blocks) {
    if (b.id.empty()) throw FormatError("block with empty id");
    if (!block_ids.insert(b.id).second) throw FormatError("duplicate block id '" + b.id + "'");
    std::set<std::string> members;
    for (const auto& id : b.layer_ids) {
      if (!s.find_layer(id)) {
        throw FormatError("dangling layer id '" + id + "' in block '" + b.id + "'");
      }
      members.insert(id);
    }
    for (const auto& id : b.prunable_bn_ids) {
      if (!members.count(id)) {
        throw FormatError("prunable_bn_id '" + id + "' is not inside block '" + b.id + "'");
      }
      if (s.layer(id).kind != LayerKind::batch_norm) {
        throw FormatError("prunable_bn_id '" + id + "' of block '" + b.id +
                          "' is not a batch_norm layer");
      }
    }
    for (const auto& id : b.internal_prunable_layer_ids) {
      if (!members.count(id)) {
        throw FormatError("internal prunable layer '" + id + "' is not inside block '" + b.id + "'");
      }
      if (!s.layer(id).prunable) {
        throw FormatError("internal prunable layer '" + id + "' of block '" + b.id +
                          "' is not marked prunable");
      }
      if (!covered_prunable.insert(id).second) {
        throw FormatError("layer '" + id + "' is prunable in more than one block");
      }
    }
    if (b.kind != BlockKind::plain) {
      // The last conv of a residual-style block feeds the shortcut add.
      std::string last_conv;
      for (const auto& id : b.layer_ids) {
        if (s.layer(id).kind == LayerKind::conv) last_conv = id;
      }
      if (!last_conv.empty() &&
          std::find(b.internal_prunable_layer_ids.begin(), b.internal_prunable_layer_ids.end(),
                    last_conv) != b.internal_prunable_layer_ids.end()) {
        throw FormatError("block '" + b.id + "' marks its output layer '" + last_conv +
                          "' prunable; shortcut-tied channels cannot be pruned");
      }
    }
  }
  for (const auto& l : s.layers) {
    if (l.prunable && !covered_prunable.count(l.id)) {
      throw FormatError("prunable layer '" + l.id + "' is not listed by any block");
    }
  }

  // Pruning a layer must never change the channel count seen by a
  // shortcut add: probe each prunable layer alone at one channel.
  for (const auto& l : s.layers) {
    if (!l.prunable || l.out_channels == 1) continue;
    try {
      (void)infer_geometry(s, {{l.id, 1}});
    } catch (const ShapeError& e) {
      throw ShapeError("pruning layer '" + l.id + "' breaks the graph: " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json extent_json(const Extent2& e) { return json::array({e.h, e.w}); }

Extent2 parse_extent(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw FormatError("malformed manifest: " + what + " must be a pair of integers");
  }
  return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>()};
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError("malformed manifest: missing field '" + std::string(key) + "' in " + where);
  }
  return obj.at(key);
}

std::vector<std::string> string_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw FormatError("malformed manifest: " + where + " must be an array");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw FormatError("malformed manifest: " + where + " must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

void put_f32_le(std::uint8_t* dst, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  dst[0] = static_cast<std::uint8_t>(bits);
  dst[1] = static_cast<std::uint8_t>(bits >> 8);
  dst[2] = static_cast<std::uint8_t>(bits >> 16);
  dst[3] = static_cast<std::uint8_t>(bits >> 24);
}

float get_f32_le(const std::uint8_t* src) {
  const std::uint32_t bits = static_cast<std::uint32_t>(src[0]) |
                             (static_cast<std::uint32_t>(src[1]) << 8) |
                             (static_cast<std::uint32_t>(src[2]) << 16) |
                             (static_cast<std::uint32_t>(src[3]) << 24);
  return std::bit_cast<float>(bits);
}

constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

}  // namespace

std::vector<TensorRecord> pack_records(const ModelSnapshot& s) {
  std::vector<TensorRecord> records;
  std::set<std::string> placed;
  std::uint64_t offset = 0;
  auto place = [&](const std::string& name, const Tensor& t) {
    if (!placed.insert(name).second) return;
    const std::uint64_t length = 4 * static_cast<std::uint64_t>(t.numel());
    records.push_back({name, t.shape(), offset, length});
    offset += length;
  };
  for (const auto& l : s.layers) {
    for (const auto& [name, shape] : expected_tensors(l)) {
      auto it = s.tensors.find(name);
      if (it != s.tensors.end()) place(name, it->second);
    }
  }
  for (const auto& [name, t] : s.tensors) place(name, t);
  return records;
}

EncodedSnapshot encode_snapshot(const ModelSnapshot& s) {
  json m;
  m["format_version"] = s.format_version;
  m["arch_name"] = s.arch_name;
  m["input_shape"] = json::array({s.input_shape.channels, s.input_shape.height, s.input_shape.width});
  m["num_classes"] = s.num_classes;
  json layers = json::array();
  for (const auto& l : s.layers) {
    json j;
    j["id"] = l.id;
    j["kind"] = std::string(to_string(l.kind));
    j["in_channels"] = l.in_channels;
    j["out_channels"] = l.out_channels;
    j["kernel"] = extent_json(l.kernel);
    j["stride"] = extent_json(l.stride);
    j["padding"] = extent_json(l.padding);
    j["has_bias"] = l.has_bias;
    j["prunable"] = l.prunable;
    if (!l.input.empty()) j["input"] = l.input;
    if (!l.skip.empty()) j["skip"] = l.skip;
    if (l.kind == LayerKind::batch_norm) j["epsilon"] = l.epsilon;
    layers.push_back(std::move(j));
  }
  m["layers"] = std::move(layers);
  json blocks = json::array();
  for (const auto& b : s.blocks) {
    blocks.push_back({{"id", b.id},
                      {"kind", std::string(to_string(b.kind))},
                      {"layer_ids", b.layer_ids},
                      {"prunable_bn_ids", b.prunable_bn_ids},
                      {"internal_prunable_layer_ids", b.internal_prunable_layer_ids}});
  }
  m["blocks"] = std::move(blocks);

  EncodedSnapshot out;
  const auto records = pack_records(s);
  json tensors = json::array();
  std::uint64_t total = 0;
  for (const auto& r : records) total = std::max(total, r.byte_offset + r.byte_length);
  out.blob.resize(total);
  for (const auto& r : records) {
    tensors.push_back({{"name", r.name},
                       {"dtype", "f32"},
                       {"shape", r.shape},
                       {"byte_offset", r.byte_offset},
                       {"byte_length", r.byte_length}});
    const auto& t = s.tensors.at(r.name);
    std::uint8_t* dst = out.blob.data() + r.byte_offset;
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f32_le(dst + 4 * i, t[i]);
  }
  m["tensors"] = std::move(tensors);
  out.manifest = m.dump(2);
  out.manifest.push_back('\n');
  return out;
}

ModelSnapshot decode_snapshot(std::string_view manifest, std::span<const std::uint8_t> blob) {
  json m;
  try {
    m = json::parse(manifest);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  if (!m.is_object()) throw FormatError("malformed manifest: top level must be an object");

  ModelSnapshot s;
  try {
    const auto& version = require(m, "format_version", "manifest");
    if (!version.is_number_integer()) throw FormatError("malformed manifest: format_version");
    s.format_version = version.get<int>();
    if (s.format_version != kFormatVersion) {
      throw FormatError("unsupported format_version " + std::to_string(s.format_version));
    }
    s.arch_name = require(m, "arch_name", "manifest").get<std::string>();
    const auto& shape = require(m, "input_shape", "manifest");
    if (!shape.is_array() || shape.size() != 3) {
      throw FormatError("malformed manifest: input_shape must be [C, H, W]");
    }
    s.input_shape = {shape[0].get<std::int64_t>(), shape[1].get<std::int64_t>(),
                     shape[2].get<std::int64_t>()};
    s.num_classes = require(m, "num_classes", "manifest").get<std::int64_t>();

    const auto& layers = require(m, "layers", "manifest");
    if (!layers.is_array()) throw FormatError("malformed manifest: layers must be an array");
    for (const auto& j : layers) {
      LayerSpec l;
      l.id = require(j, "id", "layer").get<std::string>();
      const std::string where = "layer '" + l.id + "'";
      const auto kind = require(j, "kind", where).get<std::string>();
      try {
        l.kind = parse_layer_kind(kind);
      } catch (const FormatError&) {
        throw FormatError("unknown layer kind '" + kind + "' in " + where);
      }
      l.in_channels = require(j, "in_channels", where).get<std::int64_t>();
      l.out_channels = require(j, "out_channels", where).get<std::int64_t>();
      if (j.contains("kernel")) l.kernel = parse_extent(j.at("kernel"), where + " kernel");
      if (j.contains("stride")) l.stride = parse_extent(j.at("stride"), where + " stride");
      if (j.contains("padding")) l.padding = parse_extent(j.at("padding"), where + " padding");
      if (j.contains("has_bias")) l.has_bias = j.at("has_bias").get<bool>();
      if (j.contains("prunable")) l.prunable = j.at("prunable").get<bool>();
      if (j.contains("input")) l.input = j.at("input").get<std::string>();
      if (j.contains("skip")) l.skip = j.at("skip").get<std::string>();
      if (j.contains("epsilon")) l.epsilon = j.at("epsilon").get<double>();
      if (!is_spatial_kind(l.kind) && (l.kernel != Extent2{1, 1} || l.stride != Extent2{1, 1})) {
        // Kernel/stride are meaningless here; keep them but they must stay canonical.
        throw FormatError("malformed manifest: " + where + " sets kernel/stride on a " + kind +
                          " layer");
      }
      s.layers.push_back(std::move(l));
    }

    const auto& blocks = require(m, "blocks", "manifest");
    if (!blocks.is_array()) throw FormatError("malformed manifest: blocks must be an array");
    for (const auto& j : blocks) {
      BlockSpec b;
      b.id = require(j, "id", "block").get<std::string>();
      const std::string where = "block '" + b.id + "'";
      b.kind = parse_block_kind(require(j, "kind", where).get<std::string>());
      b.layer_ids = string_list(require(j, "layer_ids", where), where + " layer_ids");
      b.prunable_bn_ids = string_list(require(j, "prunable_bn_ids", where), where + " prunable_bn_ids");
      b.internal_prunable_layer_ids = string_list(require(j, "internal_prunable_layer_ids", where),
                                                  where + " internal_prunable_layer_ids");
      s.blocks.push_back(std::move(b));
    }

    const auto& tensors = require(m, "tensors", "manifest");
    if (!tensors.is_array()) throw FormatError("malformed manifest: tensors must be an array");
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (const auto& j : tensors) {
      const auto name = require(j, "name", "tensor record").get<std::string>();
      const std::string where = "tensor '" + name + "'";
      if (j.contains("dtype") && j.at("dtype").get<std::string>() != "f32") {
        throw FormatError(where + " has unsupported dtype '" + j.at("dtype").get<std::string>() + "'");
      }
      Shape tshape;
      std::uint64_t count = 1;
      for (const auto& d : require(j, "shape", where)) {
        const auto dim = d.get<std::int64_t>();
        if (dim < 0) throw FormatError("shape/offset mismatch: " + where + " has a negative dimension");
        tshape.push_back(dim);
        count *= static_cast<std::uint64_t>(dim);
        if (count > kMaxElements) throw FormatError("shape/offset mismatch: " + where + " is too large");
      }
      const auto offset = require(j, "byte_offset", where).get<std::uint64_t>();
      const auto length = require(j, "byte_length", where).get<std::uint64_t>();
      if (length != 4 * count) {
        throw FormatError("shape/offset mismatch: " + where + " has byte_length " +
                          std::to_string(length) + " but shape " + shape_to_string(tshape) +
                          " needs " + std::to_string(4 * count));
      }
      if (offset % 4 != 0) {
        throw FormatError("shape/offset mismatch: " + where + " offset is not 4-byte aligned");
      }
      if (offset > blob.size() || length > blob.size() - offset) {
        throw FormatError("shape/offset mismatch: " + where + " extends past the end of the blob");
      }
      if (s.tensors.count(name)) throw FormatError("duplicate " + where);
      spans.emplace_back(offset, length);
      std::vector<float> values(count);
      const std::uint8_t* src = blob.data() + offset;
      for (std::uint64_t i = 0; i < count; ++i) values[i] = get_f32_le(src + 4 * i);
      s.tensors.emplace(name, Tensor(std::move(tshape), std::move(values)));
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i - 1].second > 0 && spans[i].second > 0 &&
          spans[i - 1].first + spans[i - 1].second > spans[i].first) {
        throw FormatError("shape/offset mismatch: tensor records overlap");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  validate(s);
  return s;
}

ModelSnapshot load_snapshot(const std::filesystem::path& manifest_path,
                            const std::filesystem::path& blob_path) {
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot open manifest " + manifest_path.string());
  std::string manifest((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw IoError("cannot open blob " + blob_path.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  return decode_snapshot(manifest, blob);
}

void save_snapshot(const ModelSnapshot& s, const std::filesystem::path& manifest_path,
                   const std::filesystem::path& blob_path) {
  validate(s);
  const auto encoded = encode_snapshot(s);
  std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write manifest " + manifest_path.string());
  mf.write(encoded.manifest.data(), static_cast<std::streamsize>(encoded.manifest.size()));
  std::ofstream bf(blob_path, std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write blob " + blob_path.string());
  bf.write(reinterpret_cast<const char*>(encoded.blob.data()),
           static_cast<std::streamsize>(encoded.blob.size()));
  if (!mf || !bf) throw IoError("write failed for " + manifest_path.string());
}

}  // namespace chanprune
