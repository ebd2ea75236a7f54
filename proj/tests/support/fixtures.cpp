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

#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <stdexcept>

#include <unistd.h>

#include "chanprune/builtin_arch.hpp"

namespace testsupport {

using namespace chanprune;

LayerSpec conv(const std::string& id, std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride,
               bool prunable, const std::string& input) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::conv;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = {k, k};
  l.stride = {stride, stride};
  l.padding = {k / 2, k / 2};
  l.prunable = prunable;
  l.input = input;
  return l;
}

LayerSpec simple(const std::string& id, LayerKind kind, std::int64_t channels, const std::string& input) {
  LayerSpec l;
  l.id = id;
  l.kind = kind;
  l.in_channels = channels;
  l.out_channels = channels;
  l.input = input;
  if (kind == LayerKind::max_pool) {
    l.kernel = {2, 2};
    l.stride = {2, 2};
  }
  return l;
}

void fill_tensors(ModelSnapshot& s, std::uint64_t seed) {
  Rng rng(seed);
  s.tensors.clear();
  for (const auto& l : s.layers) {
    for (const auto& [name, shape] : expected_tensors(l)) {
      Tensor t(shape);
      double lo = -0.5, hi = 0.5;
      if (name.ends_with(".gamma")) {
        lo = 0.2;
        hi = 1.2;
      } else if (name.ends_with(".beta") || name.ends_with(".mean")) {
        lo = -0.1;
        hi = 0.1;
      } else if (name.ends_with(".var")) {
        lo = 0.5;
        hi = 1.5;
      }
      for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
      s.tensors.emplace(name, std::move(t));
    }
  }
}

ModelSnapshot two_conv_chain() {
  ModelSnapshot s;
  s.arch_name = "two_conv";
  s.input_shape = {3, 16, 16};
  s.num_classes = 8 * 16 * 16;
  s.layers = {conv("c1", 3, 8, 3, 1, true), conv("c2", 8, 8, 3, 1, true)};
  s.blocks = {{"b1", BlockKind::plain, {"c1"}, {}, {"c1"}}, {"b2", BlockKind::plain, {"c2"}, {}, {"c2"}}};
  fill_tensors(s, 5);
  return s;
}

ModelSnapshot hand_vgg6(std::uint64_t seed) {
  ModelSnapshot s;
  s.arch_name = "hand_vgg6";
  s.input_shape = {3, 16, 16};
  s.num_classes = 4;
  const std::int64_t widths[] = {4, 4, 8, 8, 8, 8};
  std::int64_t in = 3;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "b" + std::to_string(i + 1);
    s.layers.push_back(conv(id + ".conv", in, widths[i], 3, 1, true));
    s.layers.push_back(simple(id + ".bn", LayerKind::batch_norm, widths[i]));
    s.layers.push_back(simple(id + ".relu", LayerKind::relu, widths[i]));
    s.blocks.push_back({id, BlockKind::plain, {id + ".conv", id + ".bn", id + ".relu"}, {id + ".bn"}, {id + ".conv"}});
    in = widths[i];
    if (i == 1 || i == 3) s.layers.push_back(simple("pool" + std::to_string(i / 2 + 1), LayerKind::max_pool, in));
  }
  s.layers.push_back(simple("gap", LayerKind::global_avg_pool, in));
  s.layers.push_back(simple("flatten", LayerKind::flatten, in));
  LayerSpec fc;
  fc.id = "fc";
  fc.kind = LayerKind::fully_connected;
  fc.in_channels = in;
  fc.out_channels = 4;
  fc.has_bias = true;
  s.layers.push_back(fc);
  fill_tensors(s, seed);
  return s;
}

ModelSnapshot random_arch(std::uint64_t seed, const RandomArchOptions& o) {
  Rng rng(seed);
  ModelSnapshot s;
  s.arch_name = "random_" + std::to_string(seed);
  const std::int64_t hw = 8 + 4 * static_cast<std::int64_t>(rng.below(3));
  s.input_shape = {1 + static_cast<std::int64_t>(rng.below(3)), hw, hw};
  s.num_classes = 2 + static_cast<std::int64_t>(rng.below(4));
  std::int64_t c = s.input_shape.channels, h = hw;
  std::string last = std::string(kNetworkInput);
  // Current tensor comes straight from a prunable conv: an identity
  // shortcut on it would tie pruned channels to the add.
  bool tied = false;

  auto push = [&](LayerSpec l) {
    last = l.id;
    s.layers.push_back(std::move(l));
    return last;
  };
  const int blocks = o.min_blocks + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.max_blocks - o.min_blocks + 1)));
  for (int b = 0; b < blocks; ++b) {
    const std::string id = "blk" + std::to_string(b);
    int kind = static_cast<int>(rng.below(3));
    if (kind == 1 && !o.residual) kind = 0;
    if (kind == 2 && !o.inverted_residual) kind = 0;
    if (kind == 0 || b == 0) {
      const std::int64_t out = 2 + static_cast<std::int64_t>(rng.below(11));
      const std::int64_t k = rng.below(2) ? 3 : 1;
      push(conv(id + ".conv", c, out, k, 1, true, b == 0 ? std::string(kNetworkInput) : std::string()));
      push(simple(id + ".bn", LayerKind::batch_norm, out));
      push(simple(id + ".relu", LayerKind::relu, out));
      s.blocks.push_back({id, BlockKind::plain, {id + ".conv", id + ".bn", id + ".relu"}, {id + ".bn"}, {id + ".conv"}});
      c = out;
      tied = true;
      if (h >= 4 && rng.below(3) == 0) {
        push(simple(id + ".pool", LayerKind::max_pool, c));
        h /= 2;
      }
    } else if (kind == 1) {
      const std::string in_id = last;
      const std::int64_t stride = h >= 4 && rng.below(2) ? 2 : 1;
      const std::int64_t out = rng.below(2) ? c : c + 2;
      const std::int64_t mid = 2 + static_cast<std::int64_t>(rng.below(9));
      BlockSpec blk{id, BlockKind::residual, {}, {id + ".bn1"}, {id + ".conv1"}};
      blk.layer_ids.push_back(push(conv(id + ".conv1", c, mid, 3, stride, true)));
      blk.layer_ids.push_back(push(simple(id + ".bn1", LayerKind::batch_norm, mid)));
      blk.layer_ids.push_back(push(simple(id + ".relu1", LayerKind::relu, mid)));
      blk.layer_ids.push_back(push(conv(id + ".conv2", mid, out, 3)));
      const std::string main = push(simple(id + ".bn2", LayerKind::batch_norm, out));
      blk.layer_ids.push_back(main);
      std::string shortcut = in_id;
      if (stride != 1 || out != c || tied) {
        blk.layer_ids.push_back(push(conv(id + ".down", c, out, 1, stride, false, in_id)));
        shortcut = push(simple(id + ".down_bn", LayerKind::batch_norm, out));
        blk.layer_ids.push_back(shortcut);
      }
      auto add = simple(id + ".add", LayerKind::add_residual, out, main);
      add.skip = shortcut;
      blk.layer_ids.push_back(push(add));
      blk.layer_ids.push_back(push(simple(id + ".relu2", LayerKind::relu, out)));
      s.blocks.push_back(blk);
      c = out;
      tied = false;
      h = (h - 1) / stride + 1;
    } else {
      const std::string in_id = last;
      const std::int64_t stride = h >= 4 && rng.below(2) ? 2 : 1;
      const std::int64_t wide = c * (2 + static_cast<std::int64_t>(rng.below(3)));
      const std::int64_t out = rng.below(2) ? c : c + 1;
      BlockSpec blk{id, BlockKind::inverted_residual, {}, {id + ".expand_bn", id + ".dw_bn"}, {id + ".expand"}};
      blk.layer_ids.push_back(push(conv(id + ".expand", c, wide, 1, 1, true)));
      blk.layer_ids.push_back(push(simple(id + ".expand_bn", LayerKind::batch_norm, wide)));
      blk.layer_ids.push_back(push(simple(id + ".expand_relu", LayerKind::relu6, wide)));
      auto dw = conv(id + ".dw", wide, wide, 3, stride);
      dw.kind = LayerKind::depthwise_conv;
      blk.layer_ids.push_back(push(dw));
      blk.layer_ids.push_back(push(simple(id + ".dw_bn", LayerKind::batch_norm, wide)));
      blk.layer_ids.push_back(push(simple(id + ".dw_relu", LayerKind::relu6, wide)));
      blk.layer_ids.push_back(push(conv(id + ".project", wide, out, 1)));
      const std::string main = push(simple(id + ".project_bn", LayerKind::batch_norm, out));
      blk.layer_ids.push_back(main);
      if (stride == 1 && out == c && !tied) {
        auto add = simple(id + ".add", LayerKind::add_residual, out, main);
        add.skip = in_id;
        blk.layer_ids.push_back(push(add));
      }
      s.blocks.push_back(blk);
      c = out;
      tied = false;
      h = (h - 1) / stride + 1;
    }
  }
  push(simple("gap", LayerKind::global_avg_pool, c));
  push(simple("flatten", LayerKind::flatten, c));
  LayerSpec fc;
  fc.id = "fc";
  fc.kind = LayerKind::fully_connected;
  fc.in_channels = c;
  fc.out_channels = s.num_classes;
  fc.has_bias = true;
  push(fc);
  fill_tensors(s, seed ^ 0xabcdefULL);
  return s;
}

std::filesystem::path fresh_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto base = std::filesystem::temp_directory_path() /
                    ("chanprune_test_" + std::to_string(::getpid()) + "_" + tag + "_" + std::to_string(counter++));
  std::filesystem::remove_all(base);
  std::filesystem::create_directories(base);
  return base;
}

void write_cifar_file(const std::filesystem::path& path, const std::vector<CifarRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& r : records) {
    if (r.pixels.size() != 3072) throw std::invalid_argument("cifar record needs 3072 pixels");
    out.put(static_cast<char>(r.label));
    out.write(reinterpret_cast<const char*>(r.pixels.data()), 3072);
  }
}

std::filesystem::path fixture_dir() { return CHANPRUNE_FIXTURE_DIR; }

}  // namespace testsupport
