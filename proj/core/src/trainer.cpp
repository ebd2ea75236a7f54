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

#include "chanprune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "chanprune/engine.hpp"
#include "chanprune/error.hpp"
#include "chanprune/rng.hpp"

namespace chanprune {

double LrSchedule::at(int epoch, int total_epochs) const {
  switch (kind) {
    case Kind::step:
      return initial * std::pow(factor, drop_every > 0 ? epoch / drop_every : 0);
    case Kind::cosine:
      if (total_epochs <= 0) return initial;
      return 0.5 * initial * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
  }
  return initial;
}

void TrainConfig::check() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr.initial > 0.0)) throw ConfigError("learning rate must be > 0");
  if (lr.kind == LrSchedule::Kind::step && (lr.drop_every < 1 || !(lr.factor > 0.0))) {
    throw ConfigError("step schedule needs drop_every >= 1 and factor > 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (sparsity < 0.0) throw ConfigError("sparsity lambda must be >= 0");
}

double cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels, Tensor* grad) {
  const std::int64_t N = logits.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != N || N == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) + " rows");
  }
  const std::int64_t K = logits.numel() / N;
  if (grad) *grad = Tensor({N, K});
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    const float* row = logits.data() + n * K;
    const std::int32_t y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= K) throw ShapeError("label " + std::to_string(y) + " outside " + std::to_string(K) + " classes");
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    total += std::log(z) + mx - row[y];
    if (grad) {
      for (std::int64_t k = 0; k < K; ++k) {
        const double p = std::exp(row[k] - mx) / z;
        (*grad)[n * K + k] = static_cast<float>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(N));
      }
    }
  }
  return total / static_cast<double>(N);
}

double loss(const Tensor& logits, std::span<const std::int32_t> labels, std::span<const float> gammas,
            double lambda) {
  double penalty = 0.0;
  for (float g : gammas) penalty += std::fabs(g);
  return cross_entropy(logits, labels) + lambda * penalty;
}

std::vector<std::string> penalized_gammas(const ModelSnapshot& s) {
  std::set<std::string> ids;
  for (const auto& b : s.blocks) ids.insert(b.prunable_bn_ids.begin(), b.prunable_bn_ids.end());
  std::vector<std::string> names;
  for (const auto& l : s.layers) {
    if (ids.count(l.id)) names.push_back(tensor_name(l.id, kGammaSuffix));
  }
  return names;
}

double mean_abs_gamma(const ModelSnapshot& s) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& name : penalized_gammas(s)) {
    for (float g : s.tensor(name).values()) sum += std::fabs(g);
    count += s.tensor(name).numel();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

namespace {

std::map<std::string, double> block_gamma_means(const ModelSnapshot& s) {
  std::map<std::string, double> out;
  for (const auto& b : s.blocks) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& id : b.prunable_bn_ids) {
      const Tensor& g = s.tensor(tensor_name(id, kGammaSuffix));
      for (float v : g.values()) sum += std::fabs(v);
      count += g.numel();
    }
    if (count) out[b.id] = sum / static_cast<double>(count);
  }
  return out;
}

bool is_bn_param(const ModelSnapshot& s, const std::string& name) {
  const auto dot = name.rfind('.');
  const auto* l = s.find_layer(std::string_view(name).substr(0, dot));
  return l && l->kind == LayerKind::batch_norm;
}

}  // namespace

TrainResult train(const ModelSnapshot& s, const DataSlice& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.check();
  TrainResult result;
  result.snapshot = s;
  if (cfg.epochs == 0) return result;
  if (data.size() == 0) throw ConfigError("training data is empty");

  ModelSnapshot& m = result.snapshot;
  const double lambda = cfg.mode == TrainMode::sparse ? cfg.sparsity : 0.0;
  const auto params = trainable_tensors(m);
  const auto gamma_names = penalized_gammas(m);
  const std::set<std::string> penalized(gamma_names.begin(), gamma_names.end());
  std::map<std::string, Tensor> velocity;
  std::map<std::string, bool> decays;
  for (const auto& name : params) {
    velocity.emplace(name, Tensor(m.tensor(name).shape()));
    decays[name] = !is_bn_param(m, name);
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at(epoch, cfg.epochs);
    const BatchSampler batches(data, cfg.batch_size, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    Rng aug_rng(derive_seed(cfg.seed, 0x10000u + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Batch batch = batches[b];
      if (cfg.augment) augment(batch, aug_rng);
      auto fwd = forward(m, batch.images, {Mode::train, false});
      Tensor grad_logits;
      double batch_loss = cross_entropy(fwd.logits, batch.labels, &grad_logits);
      if (lambda > 0.0) {
        double penalty = 0.0;
        for (const auto& name : gamma_names) {
          for (float g : m.tensor(name).values()) penalty += std::fabs(g);
        }
        batch_loss += lambda * penalty;
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      loss_sum += batch_loss;
      const auto predicted = argmax_rows(fwd.logits);
      for (std::size_t k = 0; k < predicted.size(); ++k) correct += predicted[k] == batch.labels[k];
      seen += static_cast<std::int64_t>(predicted.size());

      const auto grads = backward(fwd.cache, grad_logits);
      update_running_stats(m, fwd.cache);
      for (const auto& name : params) {
        Tensor& w = m.tensor(name);
        Tensor& v = velocity.at(name);
        const Tensor& g = grads.at(name);
        const double wd = decays.at(name) ? cfg.weight_decay : 0.0;
        const bool l1 = lambda > 0.0 && penalized.count(name);
        for (std::int64_t k = 0; k < w.numel(); ++k) {
          double d = g[k] + wd * w[k];
          if (l1 && w[k] != 0.0f) d += w[k] > 0.0f ? lambda : -lambda;
          v[k] = static_cast<float>(cfg.momentum * v[k] + d);
          w[k] = static_cast<float>(w[k] - lr * v[k]);
        }
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.loss = loss_sum / static_cast<double>(batches.size());
    em.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    em.mean_abs_gamma = mean_abs_gamma(m);
    em.block_mean_abs_gamma = block_gamma_means(m);
    if (on_epoch) on_epoch(em);
    result.history.push_back(std::move(em));
  }
  return result;
}

}  // namespace chanprune
