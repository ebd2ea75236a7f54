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

#include "chanprune/builtin_arch.hpp"
#include "chanprune/cost_model.hpp"
#include "chanprune/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace chanprune;
using testsupport::conv;

namespace {

ModelSnapshot single_conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t side) {
  ModelSnapshot s;
  s.arch_name = "single";
  s.input_shape = {in, side, side};
  s.layers = {conv("c", in, out, k, 1, true)};
  s.blocks = {{"b", BlockKind::plain, {"c"}, {}, {"c"}}};
  s.num_classes = out * side * side;
  testsupport::fill_tensors(s, 1);
  return s;
}

std::map<std::string, std::int64_t> random_config(const ModelSnapshot& s, Rng& rng) {
  std::map<std::string, std::int64_t> cfg;
  for (const auto& l : s.layers) {
    if (l.prunable) cfg[l.id] = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(l.out_channels)));
  }
  return cfg;
}

}  // namespace

TEST_CASE("single conv examples") {
  const auto s = single_conv(3, 16, 3, 32);
  CHECK(baseline_cost(s).flops == 442368);
  CHECK(testsupport::mac_oracle_total(s) == 442368);
  CHECK(baseline_cost(s).params == 3 * 16 * 9);

  const auto one = single_conv(1, 1, 1, 1);
  CHECK(baseline_cost(one).flops == 1);
  CHECK(testsupport::mac_oracle_total(one) == 1);
}

TEST_CASE("pinned baselines") {
  const auto tiny = builtin_arch("tiny_vgg", 4, {3, 16, 16});
  CHECK(baseline_cost(tiny).flops == 424000);
  CHECK(testsupport::mac_oracle_total(tiny) == 424000);
  // conv weights 4248 + BN gamma/beta 96 + fc 64 + bias 4.
  CHECK(baseline_cost(tiny).params == 4412);

  const auto vgg = builtin_arch("vgg16", 10, {3, 32, 32});
  CHECK(baseline_cost(vgg).flops == 313201664);
  CHECK(testsupport::mac_oracle_total(vgg) == 313201664);

  ModelSnapshot empty;
  CHECK(baseline_cost(empty).flops == 0);
  CHECK(baseline_cost(empty).params == 0);
}

TEST_CASE("original channels reproduce the baseline") {
  const auto s = testsupport::hand_vgg6();
  const auto base = baseline_cost(s);
  const auto same = evaluate_cost(s, original_config(s));
  CHECK(same.flops == base.flops);
  CHECK(same.params == base.params);
  CHECK(same.per_layer == base.per_layer);
}

TEST_CASE("halving every channel of a conv chain quarters internal layers") {
  const auto s = testsupport::two_conv_chain();
  const auto base = baseline_cost(s);
  CHECK(base.flops == 202752);
  ChannelConfig half;
  half.channels = {{"c1", 4}, {"c2", 4}};
  const auto r = evaluate_cost(s, half);
  CHECK(r.per_layer.at("c2").flops * 4 == base.per_layer.at("c2").flops);
  CHECK(r.per_layer.at("c1").flops * 2 == base.per_layer.at("c1").flops);
  CHECK(r.flops == 64512);
}

TEST_CASE("agrees with the loop-count oracle on every fixture") {
  std::vector<ModelSnapshot> models = {testsupport::hand_vgg6(), testsupport::two_conv_chain()};
  for (const auto& name : builtin_arch_names()) {
    const InputShape in = name.rfind("tiny", 0) == 0 ? InputShape{3, 16, 16} : InputShape{3, 32, 32};
    if (name == "resnet110" || name == "resnet56") continue;  // slow oracle, same blocks as resnet20
    models.push_back(builtin_arch(name, 10, in));
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) models.push_back(testsupport::random_arch(seed));
  Rng rng(5);
  for (const auto& s : models) {
    CAPTURE(s.arch_name);
    const auto base = baseline_cost(s);
    const auto oracle = testsupport::mac_oracle(s);
    for (const auto& [id, macs] : oracle) CHECK(base.per_layer.at(id).flops == macs);
    const auto cfg = random_config(s, rng);
    const auto pruned = evaluate_cost(s, ChannelConfig{cfg});
    const auto pruned_oracle = testsupport::mac_oracle(s, cfg);
    for (const auto& [id, macs] : pruned_oracle) CHECK(pruned.per_layer.at(id).flops == macs);
    CHECK(pruned.flops == testsupport::mac_oracle_total(s, cfg));
    CHECK(total_flops(s, ChannelConfig{cfg}) == pruned.flops);
  }
}

TEST_CASE("per-layer entries sum to the totals") {
  Rng rng(17);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto s = testsupport::random_arch(seed);
    const auto r = evaluate_cost(s, ChannelConfig{random_config(s, rng)});
    std::int64_t flops = 0, params = 0;
    for (const auto& [id, c] : r.per_layer) {
      flops += c.flops;
      params += c.params;
    }
    CHECK(flops == r.flops);
    CHECK(params == r.params);
    CHECK(r.spatial.size() == s.layers.size());
  }
}

TEST_CASE("raising one channel count never lowers the cost") {
  Rng rng(23);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = testsupport::random_arch(seed);
    for (int trial = 0; trial < 10; ++trial) {
      auto cfg = random_config(s, rng);
      const auto before = evaluate_cost(s, ChannelConfig{cfg});
      std::vector<std::string> growable;
      for (const auto& [id, c] : cfg) {
        if (c < s.layer(id).out_channels) growable.push_back(id);
      }
      if (growable.empty()) continue;
      const auto& id = growable[rng.below(growable.size())];
      ++cfg[id];
      const auto after = evaluate_cost(s, ChannelConfig{cfg});
      CHECK(after.flops >= before.flops);
      CHECK(after.params >= before.params);
    }
  }
}

TEST_CASE("relaxed cost matches integer cost at integer channels") {
  Rng rng(31);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = testsupport::random_arch(seed);
    const auto cfg = random_config(s, rng);
    std::map<std::string, double> relaxed(cfg.begin(), cfg.end());
    CHECK(relaxed_flops(s, relaxed) == doctest::Approx(static_cast<double>(total_flops(s, ChannelConfig{cfg}))));
  }
}

TEST_CASE("invalid configurations") {
  const auto s = testsupport::hand_vgg6();
  CHECK_THROWS_AS(evaluate_cost(s, ChannelConfig{{{"nope", 2}}}), ConfigError);
  CHECK_THROWS_AS(evaluate_cost(s, ChannelConfig{{{"b1.conv", 0}}}), ConfigError);
  CHECK_THROWS_AS(evaluate_cost(s, ChannelConfig{{{"b1.conv", 5}}}), ConfigError);
  CHECK_THROWS_AS(evaluate_cost(s, ChannelConfig{{{"fc", 2}}}), ConfigError);
  CHECK_THROWS_AS(check_config(s, ChannelConfig{{{"b1.bn", 2}}}), ConfigError);
  CHECK_NOTHROW(check_config(s, ChannelConfig{{{"b1.conv", 1}}}));
}
