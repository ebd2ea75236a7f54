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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "chanprune/model_ir.hpp"

namespace chanprune {

/// Names accepted by builtin_arch.
std::vector<std::string> builtin_arch_names();

/// Constructs a built-in architecture with seeded random weights.
///
/// Known names: tiny_vgg, tiny_resnet, tiny_ir (test-scale), vgg16,
/// resnet20, resnet56, resnet110 (CIFAR-style residual nets) and
/// mobilenetv2 (CIFAR-style inverted residual net). Throws ConfigError for
/// unknown names.
ModelSnapshot builtin_arch(std::string_view name, std::int64_t num_classes,
                           const InputShape& input_shape, std::uint64_t seed = 0);

/// Overwrites every parameter with a fresh seeded draw: He-uniform conv
/// kernels, fan-in uniform fully-connected weights, zero biases, BN gamma=1,
/// beta=0 and running stats (0, 1).
void initialize_parameters(ModelSnapshot& s, std::uint64_t seed);

}  // namespace chanprune
