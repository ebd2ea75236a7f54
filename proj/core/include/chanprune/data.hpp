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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chanprune/model_ir.hpp"
#include "chanprune/rng.hpp"
#include "chanprune/tensor.hpp"

namespace chanprune {

struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

/// Labeled images, N x C x H x W, already normalized.
struct DataSlice {
  Tensor images;
  std::vector<std::int32_t> labels;
  std::string name;
  Normalization normalization;
  std::int64_t num_classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

inline constexpr std::int64_t kCifarRecordBytes = 3073;
inline constexpr std::int64_t kCifarRecordsPerFile = 10000;
inline const Normalization kCifarNormalization{{0.4914f, 0.4822f, 0.4465f},
                                               {0.2470f, 0.2435f, 0.2616f}};

enum class Split { train, test };

/// Reads one CIFAR-10 binary batch file holding any whole number of
/// records.
DataSlice load_cifar10_file(const std::filesystem::path& path);

/// Reads data_batch_1..5.bin (train) or test_batch.bin (test) from `dir`;
/// each file must hold exactly 10000 records.
DataSlice load_cifar10(const std::filesystem::path& dir, Split split);

struct SyntheticSplit {
  DataSlice train;
  DataSlice val;
};

/// Seeded template-plus-noise classification data: every class owns a
/// template image in [0, 1]; each sample is clamp(template + U(-noise,
/// noise)). The first 80% of each class's samples form the train split.
SyntheticSplit synthetic_dataset(std::int64_t num_classes, std::int64_t n_per_class,
                                 const InputShape& shape, double noise, std::uint64_t seed);

/// Normalization applied to synthetic data: (x - 0.5) / 0.25 per channel.
Normalization synthetic_normalization(std::int64_t channels);

/// The first `count` samples (clamped to the slice size).
DataSlice head(const DataSlice& d, std::int64_t count);

struct Batch {
  Tensor images;
  std::vector<std::int32_t> labels;
};

/// Random-access view splitting a slice into batches. Covers every sample
/// once; the last batch may be short. With a seed the order is a seeded
/// Fisher-Yates permutation, otherwise the stored order.
class BatchSampler {
 public:
  BatchSampler(const DataSlice& data, std::int64_t batch_size,
               std::optional<std::uint64_t> shuffle_seed = std::nullopt);

  std::size_t size() const { return num_batches_; }
  Batch operator[](std::size_t index) const;
  const std::vector<std::int64_t>& order() const { return order_; }

 private:
  const DataSlice* data_;
  std::int64_t batch_size_;
  std::size_t num_batches_;
  std::vector<std::int64_t> order_;
};

/// Random horizontal flip and 4-pixel zero-pad random crop, in place.
void augment(Batch& batch, Rng& rng);

}  // namespace chanprune
