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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "chanprune/builtin_arch.hpp"
#include "chanprune/engine.hpp"
#include "chanprune/error.hpp"
#include "chanprune/inheritance.hpp"
#include "chanprune/planner.hpp"
#include "fixtures.hpp"
#include "reference.hpp"

using namespace chanprune;

namespace {

Tensor random_batch(const ModelSnapshot& s, std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, s.input_shape.channels, s.input_shape.height, s.input_shape.width});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return x;
}

double max_abs_diff(const Tensor& a, const testsupport::DTensor& b) {
  REQUIRE(static_cast<std::size_t>(a.numel()) == b.v.size());
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b.v[static_cast<std::size_t>(i)]));
  return m;
}

std::vector<ModelSnapshot> tiny_models(const InputShape& in = {3, 16, 16}) {
  std::vector<ModelSnapshot> out;
  for (const char* name : {"tiny_vgg", "tiny_resnet", "tiny_ir"}) out.push_back(builtin_arch(name, 4, in, 7));
  return out;
}

// Randomizes BN parameters so the identity-ish defaults do not hide bugs.
void perturb_bn(ModelSnapshot& s, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : s.tensors) {
    if (name.ends_with(".gamma")) for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.5, 1.5));
    if (name.ends_with(".beta") || name.ends_with(".mean")) for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    if (name.ends_with(".var")) for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.5, 2.0));
  }
}

// Mean cross-entropy gradient with respect to the logits.
Tensor ce_grad(const Tensor& logits, const std::vector<std::int32_t>& labels) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor g({n, k});
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
    double z = 0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(logits[i * k + j] - mx);
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = std::exp(logits[i * k + j] - mx) / z;
      g[i * k + j] = static_cast<float>((p - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return g;
}

ModelSnapshot identity_conv_bn() {
  ModelSnapshot s;
  s.arch_name = "id";
  s.input_shape = {1, 4, 4};
  s.num_classes = 1;
  s.layers = {testsupport::conv("c", 1, 1, 1, 1, true), testsupport::simple("bn", LayerKind::batch_norm, 1),
              testsupport::simple("gap", LayerKind::global_avg_pool, 1),
              testsupport::simple("flatten", LayerKind::flatten, 1)};
  LayerSpec fc;
  fc.id = "fc";
  fc.kind = LayerKind::fully_connected;
  fc.in_channels = 1;
  fc.out_channels = 1;
  s.layers.push_back(fc);
  s.blocks = {{"b", BlockKind::plain, {"c", "bn"}, {"bn"}, {"c"}}};
  testsupport::fill_tensors(s, 1);
  s.tensor("c.w")[0] = 1.0f;
  return s;
}

// Global-pool classifier whose logits ignore the input: bias favors class 0.
ModelSnapshot constant_logits(std::int64_t classes) {
  ModelSnapshot s;
  s.arch_name = "const";
  s.input_shape = {1, 2, 2};
  s.num_classes = classes;
  s.layers = {testsupport::simple("gap", LayerKind::global_avg_pool, 1),
              testsupport::simple("flatten", LayerKind::flatten, 1)};
  LayerSpec fc;
  fc.id = "fc";
  fc.kind = LayerKind::fully_connected;
  fc.in_channels = 1;
  fc.out_channels = classes;
  fc.has_bias = true;
  s.layers.push_back(fc);
  testsupport::fill_tensors(s, 1);
  s.tensor("fc.w").fill(0.0f);
  s.tensor("fc.b").fill(0.0f);
  s.tensor("fc.b")[0] = 1.0f;
  return s;
}

DataSlice slice_of(Tensor images, std::vector<std::int32_t> labels, std::int64_t classes) {
  DataSlice d;
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.num_classes = classes;
  d.name = "t";
  return d;
}

}  // namespace

TEST_CASE("1x1 identity conv passes the input through") {
  ModelSnapshot s;
  s.input_shape = {3, 5, 4};
  s.num_classes = 60;
  s.layers = {testsupport::conv("c", 3, 3, 1), testsupport::simple("flatten", LayerKind::flatten, 3)};
  testsupport::fill_tensors(s, 1);
  auto& w = s.tensor("c.w");
  w.fill(0.0f);
  for (std::int64_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
  const auto x = random_batch(s, 2, 3);
  const auto y = infer(s, x);
  CHECK(y.shape() == Shape{2, 60});
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("unit batch norm with zero epsilon is the identity") {
  ModelSnapshot s;
  s.input_shape = {2, 3, 3};
  s.num_classes = 18;
  s.layers = {testsupport::simple("bn", LayerKind::batch_norm, 2), testsupport::simple("flatten", LayerKind::flatten, 2)};
  s.layers[0].epsilon = 0.0;
  testsupport::fill_tensors(s, 1);
  s.tensor("bn.gamma").fill(1.0f);
  s.tensor("bn.beta").fill(0.0f);
  s.tensor("bn.mean").fill(0.0f);
  s.tensor("bn.var").fill(1.0f);
  const auto x = random_batch(s, 3, 4);
  const auto y = infer(s, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("forward matches the nested-loop reference") {
  auto models = tiny_models();
  models.push_back(testsupport::hand_vgg6(4));
  for (std::uint64_t seed = 0; seed < 15; ++seed) models.push_back(testsupport::random_arch(seed));
  for (auto& s : models) {
    CAPTURE(s.arch_name);
    perturb_bn(s, 3);
    const auto x = random_batch(s, 3, 9);
    const auto p = testsupport::params_of(s);
    const auto xd = testsupport::to_double(x);
    CHECK(max_abs_diff(infer(s, x), testsupport::reference_forward(s, p, xd, false)) < 1e-5);
    const auto train = forward(s, x, {Mode::train, true});
    CHECK(max_abs_diff(train.logits, testsupport::reference_forward(s, p, xd, true)) < 1e-5);
  }
}

TEST_CASE("eval forward and infer agree, and neither touches the snapshot") {
  auto s = builtin_arch("tiny_resnet", 4, {3, 16, 16}, 2);
  perturb_bn(s, 1);
  const auto copy = s;
  const auto x = random_batch(s, 5, 1);
  const auto a = forward(s, x).logits;
  const auto b = infer(s, x);
  CHECK(a.bitwise_equal(b));
  (void)forward(s, x, {Mode::train, false});
  CHECK(snapshots_equal(s, copy));
}

TEST_CASE("gradients match finite differences of the reference loss") {
  for (auto& s : tiny_models({3, 8, 8})) {
    CAPTURE(s.arch_name);
    perturb_bn(s, 5);
    const auto x = random_batch(s, 4, 6);
    const std::vector<std::int32_t> labels = {0, 1, 2, 3};
    auto fr = forward(s, x, {Mode::train, false});
    const auto grads = backward(fr.cache, ce_grad(fr.logits, labels));

    auto p = testsupport::params_of(s);
    const auto xd = testsupport::to_double(x);
    std::vector<double> errors;
    Rng pick(1);
    for (const auto& name : trainable_tensors(s)) {
      auto& values = p.at(name);
      const auto& g = grads.at(name);
      REQUIRE(static_cast<std::size_t>(g.numel()) == values.size());
      const std::size_t samples = std::min<std::size_t>(values.size(), 12);
      for (std::size_t t = 0; t < samples; ++t) {
        const std::size_t i = values.size() <= 12 ? t : pick.below(values.size());
        const double orig = values[i];
        const double h = 1e-5;
        values[i] = orig + h;
        const double up = testsupport::reference_loss(s, p, xd, labels);
        values[i] = orig - h;
        const double down = testsupport::reference_loss(s, p, xd, labels);
        values[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double analytic = g[static_cast<std::int64_t>(i)];
        const double err = std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
        CAPTURE(name);
        CAPTURE(i);
        CAPTURE(analytic);
        CAPTURE(numeric);
        CHECK(err < 1e-2);
        errors.push_back(err);
      }
    }
    std::sort(errors.begin(), errors.end());
    CHECK(errors[errors.size() * 95 / 100] < 1e-3);
  }
}

TEST_CASE("backward is linear in the upstream gradient") {
  const auto s = builtin_arch("tiny_ir", 4, {3, 8, 8}, 1);
  const auto x = random_batch(s, 3, 2);
  auto a = forward(s, x, {Mode::train, false});
  auto b = forward(s, x, {Mode::train, false});
  auto c = forward(s, x, {Mode::train, false});
  Tensor up({3, 4});
  Rng rng(4);
  for (auto& v : up.values()) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor twice = up;
  for (auto& v : twice.values()) v *= 2.0f;
  const auto g1 = backward(a.cache, up);
  const auto g2 = backward(b.cache, twice);
  const auto g0 = backward(c.cache, Tensor({3, 4}));
  for (const auto& [name, t] : g1) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      CHECK(g2.at(name)[i] == doctest::Approx(2.0 * t[i]).epsilon(1e-5).scale(1e-6));
      CHECK(g0.at(name)[i] == 0.0f);
    }
  }
}

TEST_CASE("train-mode batch norm output has mean beta and variance gamma squared") {
  auto s = builtin_arch("tiny_vgg", 4, {3, 16, 16}, 3);
  perturb_bn(s, 8);
  const auto x = random_batch(s, 8, 3);
  const auto fr = forward(s, x, {Mode::train, false});
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    if (l.kind != LayerKind::batch_norm) continue;
    const auto& y = fr.cache.outputs[i];
    const std::int64_t n = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double sum = 0, sq = 0;
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t k = 0; k < hw; ++k) sum += y[(b * c + ch) * hw + k];
      }
      const double mean = sum / static_cast<double>(n * hw);
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t k = 0; k < hw; ++k) sq += std::pow(y[(b * c + ch) * hw + k] - mean, 2);
      }
      const double var = sq / static_cast<double>(n * hw);
      const double gamma = s.tensor(l.id + ".gamma")[ch];
      CHECK(mean == doctest::Approx(s.tensor(l.id + ".beta")[ch]).epsilon(1e-3).scale(1.0));
      CHECK(var == doctest::Approx(gamma * gamma).epsilon(1e-3));
    }
  }
}

TEST_CASE("running statistics update with momentum") {
  auto s = identity_conv_bn();
  s.tensor("bn.mean")[0] = 1.0f;
  s.tensor("bn.var")[0] = 2.0f;
  Tensor x({2, 1, 4, 4});
  for (std::int64_t i = 0; i < 32; ++i) x[i] = static_cast<float>(i);
  const auto fr = forward(s, x, {Mode::train, false});
  update_running_stats(s, fr.cache);
  // batch mean 15.5, unbiased var of 0..31 = 88
  CHECK(s.tensor("bn.mean")[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 15.5));
  CHECK(s.tensor("bn.var")[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 88.0));
  CHECK(fr.cache.bn_stats.at("bn").biased_var[0] == doctest::Approx(85.25));
}

TEST_CASE("recalibration on hand statistics") {
  const auto s = identity_conv_bn();
  Tensor x({3, 1, 4, 4});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>((i * 7) % 11) - 3.0f;
  double m = 0;
  for (float v : x.values()) m += v;
  m /= 48.0;
  double v2 = 0;
  for (float v : x.values()) v2 += (v - m) * (v - m);
  v2 /= 47.0;
  const auto r = recalibrate_bn(s, slice_of(x, {0, 0, 0}, 1), 2);
  CHECK(r.tensor("bn.mean")[0] == doctest::Approx(m).epsilon(1e-6));
  CHECK(r.tensor("bn.var")[0] == doctest::Approx(v2).epsilon(1e-6));
  CHECK(r.tensor("bn.gamma").bitwise_equal(s.tensor("bn.gamma")));
  CHECK(r.tensor("c.w").bitwise_equal(s.tensor("c.w")));
}

TEST_CASE("recalibration is consistent and batch-size independent") {
  const auto data = synthetic_dataset(4, 10, {3, 16, 16}, 0.3, 2);
  for (auto& s : tiny_models()) {
    CAPTURE(s.arch_name);
    perturb_bn(s, 2);
    const auto once = recalibrate_bn(s, data.train);
    const auto twice = recalibrate_bn(once, data.train);
    const auto small = recalibrate_bn(s, data.train, 7);
    for (const auto& [name, t] : once.tensors) {
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        CHECK(twice.tensor(name)[i] == doctest::Approx(t[i]).epsilon(1e-4).scale(1e-4));
        CHECK(small.tensor(name)[i] == doctest::Approx(t[i]).epsilon(1e-4).scale(1e-4));
      }
      if (!name.ends_with(".mean") && !name.ends_with(".var")) CHECK(t.bitwise_equal(s.tensor(name)));
    }
    // Keep-all prune then recalibrate: same accuracy.
    const auto cfg = original_config(once);
    const auto kept = recalibrate_bn(build_pruned_snapshot(once, cfg, select_channels(once, cfg, Criterion::l1_norm)), data.train);
    CHECK(std::fabs(evaluate_accuracy(kept, data.val) - evaluate_accuracy(once, data.val)) <= 0.005);
  }
  CHECK_THROWS_AS(recalibrate_bn(tiny_models()[0], head(data.train, 0)), ConfigError);
}

TEST_CASE("accuracy examples") {
  const auto s = constant_logits(3);
  Tensor x({6, 1, 2, 2});
  CHECK(evaluate_accuracy(s, slice_of(x, {0, 0, 0, 0, 0, 0}, 3)) == 1.0);
  CHECK(evaluate_accuracy(s, slice_of(x, {0, 1, 2, 0, 1, 2}, 3)) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(evaluate_accuracy(s, slice_of(Tensor({0, 1, 2, 2}), {}, 3)), ConfigError);
  CHECK(argmax_rows(Tensor({2, 3}, {1, 3, 3, 0, 0, 0})) == std::vector<std::int32_t>{1, 0});
}

TEST_CASE("bad inputs") {
  const auto s = builtin_arch("tiny_vgg", 4, {3, 16, 16});
  CHECK_THROWS_AS(infer(s, Tensor({1, 3, 8, 8})), ShapeError);
  CHECK_THROWS_AS(infer(s, Tensor({3, 16, 16})), ShapeError);
  auto x = random_batch(s, 1, 1);
  x[5] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(forward(s, x, {Mode::eval, true}), doctest::Contains("non-finite"), NumericError);
  CHECK_NOTHROW(forward(s, x, {Mode::eval, false}));
}

TEST_CASE("stale caches are refused") {
  const auto s = builtin_arch("tiny_vgg", 4, {3, 8, 8});
  const auto x = random_batch(s, 2, 1);
  auto fr = forward(s, x, {Mode::train, false});
  const Tensor up({2, 4});
  CHECK_NOTHROW(backward(fr.cache, up));
  CHECK_THROWS_AS(backward(fr.cache, up), Error);
  auto ev = forward(s, x);
  CHECK_THROWS_AS(backward(ev.cache, up), Error);
  auto again = forward(s, x, {Mode::train, false});
  CHECK_THROWS_AS(backward(again.cache, Tensor({3, 4})), ShapeError);
}

TEST_CASE("any plan on a residual network forwards cleanly") {
  for (const char* name : {"tiny_resnet", "tiny_ir", "resnet20"}) {
    const auto s = builtin_arch(name, 10, {3, 16, 16}, 1);
    const auto v = block_importance(s);
    for (double ratio : {0.2, 0.5, 0.9}) {
      CAPTURE(name);
      CAPTURE(ratio);
      try {
        const auto plan = bisect_alpha(s, v, Budget::fraction(ratio));
        const auto p = build_pruned_snapshot(s, plan.config, select_channels(s, plan.config, Criterion::geometric_median));
        const auto y = infer(p, random_batch(p, 2, 1));
        CHECK(y.shape() == Shape{2, 10});
        CHECK(y.all_finite());
      } catch (const ConfigError&) {
        CHECK(ratio < 0.3);  // below the one-channel floor
      }
    }
  }
}
