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
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "chanprune/data.hpp"
#include "chanprune/model_ir.hpp"
#include "chanprune/tensor.hpp"

namespace chanprune {

struct LrSchedule {
  enum class Kind { step, cosine };

  Kind kind = Kind::step;
  double initial = 0.01;
  /// step only: multiply by `factor` every `drop_every` epochs.
  int drop_every = 50;
  double factor = 0.1;

  double at(int epoch, int total_epochs) const;
};

enum class TrainMode { sparse, finetune };

struct TrainConfig {
  int epochs = 150;
  std::int64_t batch_size = 256;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-3;
  /// L1 coefficient on prunable BN gammas; ignored in finetune mode.
  double sparsity = 1e-4;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::sparse;
  bool augment = false;

  void check() const;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  /// Mean over batches of cross-entropy plus the sparsity penalty.
  double loss = 0.0;
  /// Train-mode accuracy over the epoch's batches.
  double accuracy = 0.0;
  double mean_abs_gamma = 0.0;
  std::map<std::string, double> block_mean_abs_gamma;
};

struct TrainResult {
  ModelSnapshot snapshot;
  std::vector<EpochMetrics> history;
};

/// Mean softmax cross-entropy; writes d(loss)/d(logits) when grad is set.
double cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels, Tensor* grad = nullptr);

/// Cross-entropy plus lambda * sum |gamma| over `gammas`.
double loss(const Tensor& logits, std::span<const std::int32_t> labels, std::span<const float> gammas,
            double lambda);

/// Tensor names of the gammas the sparsity penalty applies to: the
/// prunable BNs of every block.
std::vector<std::string> penalized_gammas(const ModelSnapshot& s);

/// Mean |gamma| over all penalized gammas.
double mean_abs_gamma(const ModelSnapshot& s);

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train(const ModelSnapshot& s, const DataSlice& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace chanprune
