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

#include "chanprune/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "chanprune/error.hpp"

namespace chanprune {

namespace {

constexpr std::int64_t kCifarSide = 32;
constexpr std::int64_t kCifarPixels = kCifarSide * kCifarSide;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_cifar_records(const std::vector<std::uint8_t>& bytes, const std::string& source,
                          std::vector<float>& pixels, std::vector<std::int32_t>& labels) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("truncated record in " + source + " (" + std::to_string(bytes.size()) +
                      " bytes is not a whole number of 3073-byte records)");
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("label byte " + std::to_string(rec[0]) + " > 9 in record " +
                        std::to_string(r) + " of " + source);
    }
    labels.push_back(rec[0]);
    for (std::int64_t c = 0; c < 3; ++c) {
      const float mean = kCifarNormalization.mean[static_cast<std::size_t>(c)];
      const float stddev = kCifarNormalization.stddev[static_cast<std::size_t>(c)];
      const std::uint8_t* plane = rec + 1 + c * kCifarPixels;
      for (std::int64_t i = 0; i < kCifarPixels; ++i) {
        pixels.push_back((static_cast<float>(plane[i]) / 255.0f - mean) / stddev);
      }
    }
  }
}

DataSlice make_cifar_slice(std::vector<float> pixels, std::vector<std::int32_t> labels, std::string name) {
  DataSlice d;
  const auto n = static_cast<std::int64_t>(labels.size());
  d.images = Tensor({n, 3, kCifarSide, kCifarSide}, std::move(pixels));
  d.labels = std::move(labels);
  d.name = std::move(name);
  d.normalization = kCifarNormalization;
  d.num_classes = 10;
  return d;
}

}  // namespace

DataSlice load_cifar10_file(const std::filesystem::path& path) {
  std::vector<float> pixels;
  std::vector<std::int32_t> labels;
  append_cifar_records(read_file(path), path.string(), pixels, labels);
  return make_cifar_slice(std::move(pixels), std::move(labels), path.filename().string());
}

DataSlice load_cifar10(const std::filesystem::path& dir, Split split) {
  std::vector<std::string> files;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  std::vector<float> pixels;
  std::vector<std::int32_t> labels;
  pixels.reserve(files.size() * kCifarRecordsPerFile * 3 * kCifarPixels);
  for (const auto& f : files) {
    const auto bytes = read_file(dir / f);
    if (static_cast<std::int64_t>(bytes.size()) != kCifarRecordsPerFile * kCifarRecordBytes) {
      throw FormatError("truncated record: " + (dir / f).string() + " has " +
                        std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(kCifarRecordsPerFile * kCifarRecordBytes));
    }
    append_cifar_records(bytes, (dir / f).string(), pixels, labels);
  }
  return make_cifar_slice(std::move(pixels), std::move(labels),
                          split == Split::train ? "cifar10-train" : "cifar10-test");
}

Normalization synthetic_normalization(std::int64_t channels) {
  return {std::vector<float>(static_cast<std::size_t>(channels), 0.5f),
          std::vector<float>(static_cast<std::size_t>(channels), 0.25f)};
}

SyntheticSplit synthetic_dataset(std::int64_t num_classes, std::int64_t n_per_class,
                                 const InputShape& shape, double noise, std::uint64_t seed) {
  if (num_classes < 1 || n_per_class < 0) throw ConfigError("synthetic dataset sizes must be positive");
  if (!(noise >= 0.0 && noise < 0.5)) throw ConfigError("synthetic noise must be in [0, 0.5)");
  const std::int64_t C = shape.channels, H = shape.height, W = shape.width;
  const std::int64_t pixels = C * H * W;

  // Templates: a coarse 4x4 grid of random levels per channel, upsampled.
  constexpr std::int64_t kGrid = 4;
  Rng template_rng(derive_seed(seed, 0));
  std::vector<float> templates(static_cast<std::size_t>(num_classes * pixels));
  for (std::int64_t k = 0; k < num_classes; ++k) {
    for (std::int64_t c = 0; c < C; ++c) {
      float grid[kGrid][kGrid];
      for (auto& row : grid) {
        for (auto& v : row) v = static_cast<float>(template_rng.uniform());
      }
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
          templates[static_cast<std::size_t>(((k * C + c) * H + h) * W + w)] =
              grid[h * kGrid / H][w * kGrid / W];
        }
      }
    }
  }

  const std::int64_t n_train = n_per_class * 4 / 5;
  const std::int64_t n_val = n_per_class - n_train;
  const Normalization norm = synthetic_normalization(C);
  std::vector<float> train_px, val_px;
  std::vector<std::int32_t> train_labels, val_labels;
  train_px.reserve(static_cast<std::size_t>(num_classes * n_train * pixels));
  val_px.reserve(static_cast<std::size_t>(num_classes * n_val * pixels));
  Rng noise_rng(derive_seed(seed, 1));
  for (std::int64_t k = 0; k < num_classes; ++k) {
    for (std::int64_t i = 0; i < n_per_class; ++i) {
      auto& dst = i < n_train ? train_px : val_px;
      (i < n_train ? train_labels : val_labels).push_back(static_cast<std::int32_t>(k));
      for (std::int64_t p = 0; p < pixels; ++p) {
        const double base = templates[static_cast<std::size_t>(k * pixels + p)];
        const double jitter = noise > 0.0 ? noise_rng.uniform(-noise, noise) : 0.0;
        const double x = std::clamp(base + jitter, 0.0, 1.0);
        const auto c = static_cast<std::size_t>(p / (H * W));
        dst.push_back((static_cast<float>(x) - norm.mean[c]) / norm.stddev[c]);
      }
    }
  }

  auto make = [&](std::vector<float> px, std::vector<std::int32_t> labels, const char* name) {
    DataSlice d;
    const auto n = static_cast<std::int64_t>(labels.size());
    d.images = Tensor({n, C, H, W}, std::move(px));
    d.labels = std::move(labels);
    d.name = name;
    d.normalization = norm;
    d.num_classes = num_classes;
    return d;
  };
  return {make(std::move(train_px), std::move(train_labels), "synthetic-train"),
          make(std::move(val_px), std::move(val_labels), "synthetic-val")};
}

DataSlice head(const DataSlice& d, std::int64_t count) {
  const std::int64_t n = std::clamp<std::int64_t>(count, 0, d.size());
  DataSlice out;
  Shape shape = d.images.shape();
  const std::int64_t per = d.size() == 0 ? 0 : d.images.numel() / d.size();
  shape[0] = n;
  out.images = Tensor(shape, std::vector<float>(d.images.data(), d.images.data() + n * per));
  out.labels.assign(d.labels.begin(), d.labels.begin() + n);
  out.name = d.name + "[:" + std::to_string(n) + "]";
  out.normalization = d.normalization;
  out.num_classes = d.num_classes;
  return out;
}

BatchSampler::BatchSampler(const DataSlice& data, std::int64_t batch_size,
                           std::optional<std::uint64_t> shuffle_seed)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::int64_t n = data.size();
  num_batches_ = static_cast<std::size_t>((n + batch_size - 1) / batch_size);
  order_.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
    }
  }
}

Batch BatchSampler::operator[](std::size_t index) const {
  if (index >= num_batches_) throw ConfigError("batch index out of range");
  const std::int64_t n = data_->size();
  const auto begin = static_cast<std::int64_t>(index) * batch_size_;
  const std::int64_t end = std::min(n, begin + batch_size_);
  Shape shape = data_->images.shape();
  const std::int64_t per = data_->images.numel() / n;
  shape[0] = end - begin;
  Batch b;
  b.images = Tensor(shape);
  b.labels.reserve(static_cast<std::size_t>(end - begin));
  for (std::int64_t i = begin; i < end; ++i) {
    const std::int64_t src = order_[static_cast<std::size_t>(i)];
    std::memcpy(b.images.data() + (i - begin) * per, data_->images.data() + src * per,
                static_cast<std::size_t>(per) * sizeof(float));
    b.labels.push_back(data_->labels[static_cast<std::size_t>(src)]);
  }
  return b;
}

void augment(Batch& batch, Rng& rng) {
  constexpr std::int64_t kPad = 4;
  const std::int64_t N = batch.images.dim(0), C = batch.images.dim(1);
  const std::int64_t H = batch.images.dim(2), W = batch.images.dim(3);
  std::vector<float> plane(static_cast<std::size_t>(H * W));
  for (std::int64_t n = 0; n < N; ++n) {
    const bool flip = rng.below(2) == 1;
    const auto dy = static_cast<std::int64_t>(rng.below(2 * kPad + 1)) - kPad;
    const auto dx = static_cast<std::int64_t>(rng.below(2 * kPad + 1)) - kPad;
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
          const std::int64_t sh = h + dy;
          const std::int64_t sw0 = w + dx;
          const std::int64_t sw = flip ? (W - 1 - sw0) : sw0;
          const bool inside = sh >= 0 && sh < H && sw0 >= 0 && sw0 < W;
          plane[static_cast<std::size_t>(h * W + w)] = inside ? batch.images.at(n, c, sh, sw) : 0.0f;
        }
      }
      std::copy(plane.begin(), plane.end(), &batch.images.at(n, c, 0, 0));
    }
  }
}

}  // namespace chanprune
