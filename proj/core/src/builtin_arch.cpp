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

#include "chanprune/builtin_arch.hpp"

#include <cmath>
#include <map>

#include "chanprune/error.hpp"
#include "chanprune/rng.hpp"

namespace chanprune {

namespace {

class ArchBuilder {
 public:
  ArchBuilder(std::string_view arch, const InputShape& input, std::int64_t num_classes) {
    s_.arch_name = std::string(arch);
    s_.input_shape = input;
    s_.num_classes = num_classes;
    current_channels_ = input.channels;
    height_ = input.height;
    width_ = input.width;
    geometry_[std::string(kNetworkInput)] = {input.channels, input.height, input.width};
  }

  std::int64_t channels() const { return current_channels_; }
  const std::string& last() const { return last_; }

  std::string conv(const std::string& id, std::int64_t out, std::int64_t k, std::int64_t stride,
                   bool prunable = false, const std::string& input = {}) {
    LayerSpec l = make(id, LayerKind::conv, input);
    l.out_channels = out;
    l.kernel = {k, k};
    l.stride = {stride, stride};
    l.padding = {k / 2, k / 2};
    l.prunable = prunable;
    return push(std::move(l));
  }

  std::string depthwise(const std::string& id, std::int64_t k, std::int64_t stride) {
    LayerSpec l = make(id, LayerKind::depthwise_conv);
    l.kernel = {k, k};
    l.stride = {stride, stride};
    l.padding = {k / 2, k / 2};
    return push(std::move(l));
  }

  std::string simple(const std::string& id, LayerKind kind) { return push(make(id, kind)); }

  std::string max_pool(const std::string& id, std::int64_t k) {
    LayerSpec l = make(id, LayerKind::max_pool);
    l.kernel = {k, k};
    l.stride = {k, k};
    return push(std::move(l));
  }

  std::string flatten(const std::string& id) {
    LayerSpec l = make(id, LayerKind::flatten);
    l.out_channels = l.in_channels * height_ * width_;
    return push(std::move(l));
  }

  std::string fc(const std::string& id, std::int64_t out) {
    LayerSpec l = make(id, LayerKind::fully_connected);
    l.in_channels = current_channels_ * height_ * width_;
    l.out_channels = out;
    l.has_bias = true;
    return push(std::move(l));
  }

  std::string add(const std::string& id, const std::string& input, const std::string& skip) {
    LayerSpec l = make(id, LayerKind::add_residual, input);
    l.skip = skip;
    return push(std::move(l));
  }

  void begin_block(const std::string& id, BlockKind kind) {
    open_ = BlockSpec{};
    open_.id = id;
    open_.kind = kind;
    in_block_ = true;
  }

  void prunable_bn(const std::string& id) { open_.prunable_bn_ids.push_back(id); }

  void end_block() {
    for (const auto& id : open_.layer_ids) {
      if (s_.layer(id).prunable) open_.internal_prunable_layer_ids.push_back(id);
    }
    s_.blocks.push_back(std::move(open_));
    in_block_ = false;
  }

  ModelSnapshot finish(std::uint64_t seed) {
    for (const auto& l : s_.layers) {
      for (const auto& [name, shape] : expected_tensors(l)) s_.tensors.emplace(name, Tensor(shape));
    }
    initialize_parameters(s_, seed);
    validate(s_);
    return std::move(s_);
  }

 private:
  struct Geometry {
    std::int64_t c, h, w;
  };

  LayerSpec make(const std::string& id, LayerKind kind, const std::string& input = {}) {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    l.input = input;
    const Geometry g = input.empty() ? Geometry{current_channels_, height_, width_} : geometry_.at(input);
    current_channels_ = g.c;
    height_ = g.h;
    width_ = g.w;
    l.in_channels = g.c;
    l.out_channels = g.c;
    return l;
  }

  std::string push(LayerSpec l) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::depthwise_conv ||
        l.kind == LayerKind::max_pool) {
      height_ = (height_ + 2 * l.padding.h - l.kernel.h) / l.stride.h + 1;
      width_ = (width_ + 2 * l.padding.w - l.kernel.w) / l.stride.w + 1;
    } else if (l.kind == LayerKind::global_avg_pool || l.kind == LayerKind::flatten ||
               l.kind == LayerKind::fully_connected) {
      height_ = 1;
      width_ = 1;
    }
    current_channels_ = l.out_channels;
    last_ = l.id;
    geometry_[l.id] = {current_channels_, height_, width_};
    if (in_block_) open_.layer_ids.push_back(l.id);
    s_.layers.push_back(std::move(l));
    return last_;
  }

  ModelSnapshot s_;
  BlockSpec open_;
  bool in_block_ = false;
  std::string last_;
  std::int64_t current_channels_ = 0;
  std::int64_t height_ = 0;
  std::int64_t width_ = 0;
  std::map<std::string, Geometry> geometry_;
};

void conv_bn_relu_block(ArchBuilder& b, const std::string& id, std::int64_t out) {
  b.begin_block(id, BlockKind::plain);
  b.conv(id + ".conv", out, 3, 1, /*prunable=*/true);
  b.prunable_bn(b.simple(id + ".bn", LayerKind::batch_norm));
  b.simple(id + ".relu", LayerKind::relu);
  b.end_block();
}

void classifier(ArchBuilder& b, std::int64_t num_classes) {
  b.simple("gap", LayerKind::global_avg_pool);
  b.flatten("flatten");
  b.fc("fc", num_classes);
}

ModelSnapshot make_vgg(std::string_view name, const std::vector<std::int64_t>& cfg,
                       std::int64_t num_classes, const InputShape& input, std::uint64_t seed) {
  ArchBuilder b(name, input, num_classes);
  int conv_index = 0;
  int pool_index = 0;
  for (auto c : cfg) {
    if (c == 0) {
      b.max_pool("pool" + std::to_string(++pool_index), 2);
    } else {
      conv_bn_relu_block(b, "conv" + std::to_string(++conv_index), c);
    }
  }
  classifier(b, num_classes);
  return b.finish(seed);
}

void basic_block(ArchBuilder& b, const std::string& id, std::int64_t out, std::int64_t stride) {
  const std::string block_input = b.last().empty() ? std::string(kNetworkInput) : b.last();
  const std::int64_t in = b.channels();
  b.begin_block(id, BlockKind::residual);
  b.conv(id + ".conv1", out, 3, stride, /*prunable=*/true);
  b.prunable_bn(b.simple(id + ".bn1", LayerKind::batch_norm));
  b.simple(id + ".relu1", LayerKind::relu);
  b.conv(id + ".conv2", out, 3, 1);
  const std::string main = b.simple(id + ".bn2", LayerKind::batch_norm);
  std::string shortcut = block_input;
  if (stride != 1 || in != out) {
    b.conv(id + ".down", out, 1, stride, false, block_input);
    shortcut = b.simple(id + ".down_bn", LayerKind::batch_norm);
  }
  b.add(id + ".add", main, shortcut);
  b.simple(id + ".relu2", LayerKind::relu);
  b.end_block();
}

ModelSnapshot make_resnet(std::string_view name, const std::vector<std::int64_t>& widths,
                          const std::vector<int>& blocks_per_stage, std::int64_t num_classes,
                          const InputShape& input, std::uint64_t seed) {
  ArchBuilder b(name, input, num_classes);
  b.conv("stem.conv", widths[0], 3, 1);
  b.simple("stem.bn", LayerKind::batch_norm);
  b.simple("stem.relu", LayerKind::relu);
  for (std::size_t stage = 0; stage < widths.size(); ++stage) {
    for (int i = 0; i < blocks_per_stage[stage]; ++i) {
      const std::int64_t stride = (stage > 0 && i == 0) ? 2 : 1;
      basic_block(b, "s" + std::to_string(stage + 1) + ".b" + std::to_string(i), widths[stage], stride);
    }
  }
  classifier(b, num_classes);
  return b.finish(seed);
}

void inverted_residual(ArchBuilder& b, const std::string& id, std::int64_t expansion,
                       std::int64_t out, std::int64_t stride) {
  const std::string block_input = b.last();
  const std::int64_t in = b.channels();
  b.begin_block(id, BlockKind::inverted_residual);
  b.conv(id + ".expand", in * expansion, 1, 1, /*prunable=*/true);
  b.prunable_bn(b.simple(id + ".expand_bn", LayerKind::batch_norm));
  b.simple(id + ".expand_relu", LayerKind::relu6);
  b.depthwise(id + ".dw", 3, stride);
  b.prunable_bn(b.simple(id + ".dw_bn", LayerKind::batch_norm));
  b.simple(id + ".dw_relu", LayerKind::relu6);
  b.conv(id + ".project", out, 1, 1);
  const std::string main = b.simple(id + ".project_bn", LayerKind::batch_norm);
  if (stride == 1 && in == out) b.add(id + ".add", main, block_input);
  b.end_block();
}

struct IrStage {
  std::int64_t expansion, channels;
  int repeats;
  std::int64_t stride;
};

ModelSnapshot make_ir_net(std::string_view name, std::int64_t stem, const std::vector<IrStage>& stages,
                          std::int64_t head, std::int64_t num_classes, const InputShape& input,
                          std::uint64_t seed) {
  ArchBuilder b(name, input, num_classes);
  b.conv("stem.conv", stem, 3, 1);
  b.simple("stem.bn", LayerKind::batch_norm);
  b.simple("stem.relu", LayerKind::relu6);
  int index = 0;
  for (const auto& st : stages) {
    for (int i = 0; i < st.repeats; ++i) {
      const std::int64_t stride = i == 0 ? st.stride : 1;
      const std::string id = "ir" + std::to_string(index++);
      if (st.expansion == 1) {
        // No expansion layer: the depthwise channels are tied to the block
        // input, so the block is not a pruning unit.
        b.depthwise(id + ".dw", 3, stride);
        b.simple(id + ".dw_bn", LayerKind::batch_norm);
        b.simple(id + ".dw_relu", LayerKind::relu6);
        b.conv(id + ".project", st.channels, 1, 1);
        b.simple(id + ".project_bn", LayerKind::batch_norm);
      } else {
        inverted_residual(b, id, st.expansion, st.channels, stride);
      }
    }
  }
  if (head > 0) {
    b.conv("head.conv", head, 1, 1);
    b.simple("head.bn", LayerKind::batch_norm);
    b.simple("head.relu", LayerKind::relu6);
  }
  classifier(b, num_classes);
  return b.finish(seed);
}

}  // namespace

std::vector<std::string> builtin_arch_names() {
  return {"tiny_vgg", "tiny_resnet", "tiny_ir", "vgg16", "resnet20", "resnet56", "resnet110",
          "mobilenetv2"};
}

ModelSnapshot builtin_arch(std::string_view name, std::int64_t num_classes,
                           const InputShape& input_shape, std::uint64_t seed) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1) {
    throw ConfigError("input shape dimensions must be >= 1");
  }
  if (name == "tiny_vgg") {
    return make_vgg(name, {8, 8, 0, 16, 16}, num_classes, input_shape, seed);
  }
  if (name == "vgg16") {
    return make_vgg(name, {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0},
                    num_classes, input_shape, seed);
  }
  if (name == "tiny_resnet") {
    return make_resnet(name, {8, 16, 16}, {1, 1, 1}, num_classes, input_shape, seed);
  }
  if (name == "resnet20" || name == "resnet56" || name == "resnet110") {
    const int n = name == "resnet20" ? 3 : name == "resnet56" ? 9 : 18;
    return make_resnet(name, {16, 32, 64}, {n, n, n}, num_classes, input_shape, seed);
  }
  if (name == "tiny_ir") {
    return make_ir_net(name, 8, {{2, 8, 1, 1}, {2, 16, 1, 2}, {2, 16, 1, 1}}, 0, num_classes,
                       input_shape, seed);
  }
  if (name == "mobilenetv2") {
    return make_ir_net(name, 32,
                       {{1, 16, 1, 1},
                        {6, 24, 2, 1},
                        {6, 32, 3, 2},
                        {6, 64, 4, 2},
                        {6, 96, 3, 1},
                        {6, 160, 3, 2},
                        {6, 320, 1, 1}},
                       1280, num_classes, input_shape, seed);
  }
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

void initialize_parameters(ModelSnapshot& s, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& l : s.layers) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::depthwise_conv:
      case LayerKind::fully_connected: {
        auto& w = s.tensor(tensor_name(l.id, kWeightSuffix));
        const auto& shape = w.shape();
        std::int64_t fan_in = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
        const double bound = l.kind == LayerKind::fully_connected
                                 ? 1.0 / std::sqrt(static_cast<double>(fan_in))
                                 : std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
        if (l.has_bias) s.tensor(tensor_name(l.id, kBiasSuffix)).fill(0.0f);
        break;
      }
      case LayerKind::batch_norm:
        s.tensor(tensor_name(l.id, kGammaSuffix)).fill(1.0f);
        s.tensor(tensor_name(l.id, kBetaSuffix)).fill(0.0f);
        s.tensor(tensor_name(l.id, kMeanSuffix)).fill(0.0f);
        s.tensor(tensor_name(l.id, kVarSuffix)).fill(1.0f);
        break;
      default:
        break;
    }
  }
}

}  // namespace chanprune
