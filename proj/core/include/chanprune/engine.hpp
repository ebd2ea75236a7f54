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

// Dense f32 forward/backward execution of ModelSnapshot graphs.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "chanprune/data.hpp"
#include "chanprune/model_ir.hpp"
#include "chanprune/tensor.hpp"

namespace chanprune {

enum class Mode { train, eval };

struct ForwardOptions {
  Mode mode = Mode::eval;
  /// Verify that every layer output is finite.
  bool checked = false;
};

/// Per-BN batch statistics gathered by a train-mode forward.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> biased_var;
  std::int64_t count = 0;
};

/// Intermediates of one forward pass. Produced by forward(), consumed by
/// backward(); callers only inspect `bn_stats`.
struct ForwardCache {
  Mode mode = Mode::eval;
  const ModelSnapshot* snapshot = nullptr;
  bool consumed = false;
  Tensor input;
  std::vector<Tensor> outputs;
  /// BN: normalized input.
  std::vector<Tensor> normalized;
  /// BN: 1 / sqrt(var + eps) per channel.
  std::vector<std::vector<float>> inv_std;
  /// max_pool: flat input offset of each output's maximum.
  std::vector<std::vector<std::int64_t>> argmax;
  std::map<std::string, BatchNormStats> bn_stats;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

/// Runs the network on a N x C x H x W batch. Train mode normalizes with
/// batch statistics (recorded in the cache); eval mode uses running stats.
/// Throws ShapeError naming the layer on mismatch, NumericError on a
/// non-finite activation in checked mode.
ForwardResult forward(const ModelSnapshot& s, const Tensor& batch, const ForwardOptions& options = {});

/// Eval-mode logits without keeping intermediates.
Tensor infer(const ModelSnapshot& s, const Tensor& batch);

using Gradients = std::map<std::string, Tensor>;

/// Names of the trainable tensors: conv / FC weights and biases, BN gamma
/// and beta.
std::vector<std::string> trainable_tensors(const ModelSnapshot& s);

/// Reverse-mode gradients of sum(grad_logits * logits) for every trainable
/// tensor. The cache must come from a train-mode forward on a snapshot that
/// is still alive and unmodified; it is consumed. Throws Error on a stale
/// cache.
Gradients backward(ForwardCache& cache, const Tensor& grad_logits);

/// Folds the batch statistics of a train-mode forward into the running
/// stats: mean <- (1-m) mean + m batch_mean, var <- (1-m) var + m unbiased_var.
void update_running_stats(ModelSnapshot& s, const ForwardCache& cache, double momentum = 0.1);

/// Replaces every BN's running mean/variance with the exact aggregate
/// statistics of its input over `calib`, in topological order so each BN
/// sees upstream layers already recalibrated. Variance is stored unbiased.
/// Trainable parameters are untouched.
ModelSnapshot recalibrate_bn(const ModelSnapshot& s, const DataSlice& calib, std::int64_t batch_size = 256);

/// Top-1 accuracy in eval mode. Ties in the logits go to the lowest class.
double evaluate_accuracy(const ModelSnapshot& s, const DataSlice& data, std::int64_t batch_size = 256);

/// Index of the largest logit per row (lowest index on ties).
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

}  // namespace chanprune
