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

// Framework-neutral network description: an ordered chain of layers with
// optional block-local side edges, grouped into pruning blocks, plus the
// weight store. Serialized as a JSON manifest and a raw little-endian f32
// blob (see docs/snapshot_format.md).

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chanprune/tensor.hpp"

namespace chanprune {

inline constexpr int kFormatVersion = 1;

/// Reference to the network input in LayerSpec::input / LayerSpec::skip.
inline constexpr std::string_view kNetworkInput = "@input";

enum class LayerKind {
  conv,
  depthwise_conv,
  batch_norm,
  relu,
  relu6,
  max_pool,
  avg_pool,
  global_avg_pool,
  fully_connected,
  add_residual,
  flatten,
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct Extent2 {
  std::int64_t h = 1;
  std::int64_t w = 1;
  auto operator<=>(const Extent2&) const = default;
};

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::int64_t in_channels = 1;
  /// For fully_connected, in_channels is the flattened feature count.
  std::int64_t out_channels = 1;
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
  bool has_bias = false;
  bool prunable = false;
  /// Producer of this layer's input. Empty means the preceding layer in
  /// the chain (or the network input for the first layer).
  std::string input;
  /// Second operand of add_residual.
  std::string skip;
  /// batch_norm only.
  double epsilon = 1e-5;

  bool operator==(const LayerSpec&) const = default;
};

enum class BlockKind { plain, residual, inverted_residual };

std::string_view to_string(BlockKind kind);
BlockKind parse_block_kind(std::string_view name);

/// Pruning unit: one conv layer (plain chains), a residual block or an
/// inverted residual block.
struct BlockSpec {
  std::string id;
  BlockKind kind = BlockKind::plain;
  std::vector<std::string> layer_ids;
  /// BN layers whose gamma feeds this block's importance.
  std::vector<std::string> prunable_bn_ids;
  /// Layers whose out_channels scale with the block keep-ratio.
  std::vector<std::string> internal_prunable_layer_ids;

  bool operator==(const BlockSpec&) const = default;
};

struct InputShape {
  std::int64_t channels = 3;
  std::int64_t height = 32;
  std::int64_t width = 32;
  bool operator==(const InputShape&) const = default;
};

struct TensorRecord {
  std::string name;
  Shape shape;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

// Tensor naming: "<layer id><suffix>".
inline constexpr std::string_view kWeightSuffix = ".w";
inline constexpr std::string_view kBiasSuffix = ".b";
inline constexpr std::string_view kGammaSuffix = ".gamma";
inline constexpr std::string_view kBetaSuffix = ".beta";
inline constexpr std::string_view kMeanSuffix = ".mean";
inline constexpr std::string_view kVarSuffix = ".var";

inline std::string tensor_name(std::string_view layer_id, std::string_view suffix) {
  std::string name(layer_id);
  name += suffix;
  return name;
}

struct ModelSnapshot {
  int format_version = kFormatVersion;
  std::string arch_name;
  InputShape input_shape;
  std::int64_t num_classes = 0;
  std::vector<BlockSpec> blocks;
  /// Topological (execution) order.
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> tensors;

  const LayerSpec* find_layer(std::string_view id) const;
  const LayerSpec& layer(std::string_view id) const;
  std::optional<std::size_t> layer_index(std::string_view id) const;
  const BlockSpec& block(std::string_view id) const;

  const Tensor& tensor(const std::string& name) const;
  Tensor& tensor(const std::string& name);
  bool has_tensor(const std::string& name) const { return tensors.count(name) != 0; }
};

/// Structural and bitwise equality (weights compared byte for byte).
bool snapshots_equal(const ModelSnapshot& a, const ModelSnapshot& b);

/// Output geometry of a layer after shape inference.
struct LayerGeometry {
  std::int64_t in_channels = 0;
  std::int64_t in_height = 0;
  std::int64_t in_width = 0;
  std::int64_t out_channels = 0;
  std::int64_t out_height = 0;
  std::int64_t out_width = 0;
};

/// Resolved producer indices for each layer; -1 denotes the network input.
struct Topology {
  std::vector<int> input;
  std::vector<int> skip;  // -2 when the layer has no second operand
};

Topology resolve_topology(const ModelSnapshot& s);

/// Infers every layer's geometry from the input shape. `out_channels`
/// overrides the declared output channels of conv / fully_connected layers
/// (keyed by layer id); all other layers derive their channels from their
/// producer. Throws ShapeError naming the offending layer.
std::vector<LayerGeometry> infer_geometry(
    const ModelSnapshot& s, const std::map<std::string, std::int64_t>& out_channels = {});

/// Checks every type invariant; throws FormatError / ShapeError with the
/// offending id.
void validate(const ModelSnapshot& s);

/// Tensor names a layer owns, with expected shapes, in canonical order.
std::vector<std::pair<std::string, Shape>> expected_tensors(const LayerSpec& layer);

ModelSnapshot load_snapshot(const std::filesystem::path& manifest_path,
                            const std::filesystem::path& blob_path);

void save_snapshot(const ModelSnapshot& s, const std::filesystem::path& manifest_path,
                   const std::filesystem::path& blob_path);

/// In-memory codec used by load/save: manifest text and blob bytes.
struct EncodedSnapshot {
  std::string manifest;
  std::vector<std::uint8_t> blob;
};

EncodedSnapshot encode_snapshot(const ModelSnapshot& s);
ModelSnapshot decode_snapshot(std::string_view manifest, std::span<const std::uint8_t> blob);

/// Tensor records in canonical blob order (layer order, then role order).
std::vector<TensorRecord> pack_records(const ModelSnapshot& s);

}  // namespace chanprune
