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

// Hand-built snapshots and files shared by the test binaries.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chanprune/model_ir.hpp"
#include "chanprune/rng.hpp"

namespace testsupport {

using chanprune::LayerKind;
using chanprune::LayerSpec;
using chanprune::ModelSnapshot;

LayerSpec conv(const std::string& id, std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1,
               bool prunable = false, const std::string& input = {});
LayerSpec simple(const std::string& id, LayerKind kind, std::int64_t channels, const std::string& input = {});

/// Allocates every expected tensor with seeded values: weights U(-0.5, 0.5),
/// gamma U(0.2, 1.2), beta U(-0.1, 0.1), mean U(-0.1, 0.1), var U(0.5, 1.5).
void fill_tensors(ModelSnapshot& s, std::uint64_t seed);

/// conv 3->8 -> conv 8->8, k3 pad1, 16x16 maps, each conv its own block;
/// no BN (the planner examples only need costs). num_classes = 8*16*16.
ModelSnapshot two_conv_chain();

/// Six conv-BN-ReLU blocks (widths 4,4,8,8,8,8) with two max pools, then
/// global pooling and a classifier: 3x16x16 input, 4 classes.
ModelSnapshot hand_vgg6(std::uint64_t seed = 1);

struct RandomArchOptions {
  bool residual = true;
  bool inverted_residual = true;
  int min_blocks = 2;
  int max_blocks = 6;
};

/// Seeded random chain of plain / residual / inverted-residual blocks ending
/// in global pooling and a classifier.
ModelSnapshot random_arch(std::uint64_t seed, const RandomArchOptions& options = {});

/// Unique empty directory under the system temp path.
std::filesystem::path fresh_dir(const std::string& tag);

struct CifarRecord {
  std::uint8_t label = 0;
  std::vector<std::uint8_t> pixels;  // 3072 bytes, R plane then G then B
};

void write_cifar_file(const std::filesystem::path& path, const std::vector<CifarRecord>& records);

/// Directory of the checked-in fixture files.
std::filesystem::path fixture_dir();

}  // namespace testsupport
