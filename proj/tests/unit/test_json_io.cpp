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

#include <fstream>

#include "chanprune/error.hpp"
#include "chanprune/json_io.hpp"
#include "fixtures.hpp"

using namespace chanprune;

TEST_CASE("channel config round trip") {
  const ChannelConfig c{{{"a.conv", 3}, {"b.conv", 12}}};
  CHECK(channel_config_from_json(to_json(c)) == c);
  CHECK_THROWS_AS(channel_config_from_json(Json{{"a", "three"}}), ConfigError);
  CHECK_THROWS_AS(channel_config_from_json(Json::array()), ConfigError);
}

TEST_CASE("importance round trip") {
  const auto s = testsupport::hand_vgg6(3);
  const auto v = block_importance(s);
  const auto back = importance_from_json(to_json(v));
  REQUIRE(back.entries.size() == v.entries.size());
  for (std::size_t i = 0; i < v.entries.size(); ++i) {
    CHECK(back.entries[i].block_id == v.entries[i].block_id);
    CHECK(back.entries[i].importance == v.entries[i].importance);
    CHECK(back.entries[i].mean_abs_gamma == v.entries[i].mean_abs_gamma);
  }
}

TEST_CASE("budget parsing") {
  const auto b = budget_from_json(Json{{"target_flops_ratio", 0.3}, {"tolerance", 0.02}, {"interval", {0.1, 10}}});
  CHECK(b.kind == Budget::Kind::fraction_of_baseline);
  CHECK(b.target == 0.3);
  CHECK(b.tolerance == 0.02);
  CHECK(b.interval_lo == 0.1);
  CHECK(b.interval_hi == 10);
  CHECK(b.max_iters == 200);
  const auto a = budget_from_json(Json{{"target_flops", 5000}});
  CHECK(a.kind == Budget::Kind::absolute_flops);
  CHECK(a.target == 5000);
  const auto r = budget_from_json(to_json(b));
  CHECK(r.target == b.target);
  CHECK(r.interval_hi == b.interval_hi);
  CHECK_THROWS_AS(budget_from_json(Json{{"target_flops", 1}, {"target_flops_ratio", 0.5}}), ConfigError);
  CHECK_THROWS_AS(budget_from_json(Json{{"ratio", 0.5}}), ConfigError);
  CHECK_THROWS_AS(budget_from_json(Json{{"interval", {1}}}), ConfigError);
  CHECK_THROWS_AS(budget_from_json(Json{{"tolerance", "small"}}), ConfigError);
}

TEST_CASE("plan round trip keeps the configuration") {
  const auto s = testsupport::hand_vgg6(3);
  const auto plan = bisect_alpha(s, block_importance(s), Budget::fraction(0.5));
  const auto j = to_json(plan);
  CHECK(j["achieved_ratio"].get<double>() == doctest::Approx(plan.achieved_ratio()));
  const auto back = plan_from_json(j);
  CHECK(back.config == plan.config);
  CHECK(back.alpha == plan.alpha);
  CHECK(back.keep_ratios == plan.keep_ratios);
  CHECK(back.achieved.flops == plan.achieved.flops);
  CHECK(back.nearest_achievable == plan.nearest_achievable);
}

TEST_CASE("train config parsing") {
  const auto c = train_config_from_json(Json::parse(R"({
    "epochs": 7, "batch_size": 32, "momentum": 0.8, "weight_decay": 1e-4, "sparsity": 0.001,
    "mode": "finetune", "augment": true,
    "lr": {"schedule": "cosine", "initial": 0.2}
  })"));
  CHECK(c.epochs == 7);
  CHECK(c.batch_size == 32);
  CHECK(c.mode == TrainMode::finetune);
  CHECK(c.augment);
  CHECK(c.lr.kind == LrSchedule::Kind::cosine);
  CHECK(c.lr.initial == 0.2);
  CHECK(train_config_from_json(Json{{"lr", 0.5}}).lr.initial == 0.5);
  const auto back = train_config_from_json(to_json(c));
  CHECK(back.epochs == c.epochs);
  CHECK(back.lr.kind == c.lr.kind);
  CHECK(back.sparsity == c.sparsity);
  CHECK_THROWS_AS(train_config_from_json(Json{{"mode", "other"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(Json{{"seed", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(Json{{"lr", {{"schedule", "linear"}}}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(Json{{"epochs", "many"}}), ConfigError);
}

TEST_CASE("json files") {
  const auto dir = testsupport::fresh_dir("json_io");
  const Json j{{"b", 1}, {"a", {1, 2}}};
  write_json_file(dir / "x.json", j);
  CHECK(read_json_file(dir / "x.json") == j);
  // Insertion order is kept on disk.
  std::ifstream in(dir / "x.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"b\"") < text.find("\"a\""));
  CHECK_THROWS_AS(read_json_file(dir / "missing.json"), IoError);
  std::ofstream(dir / "bad.json") << "{ nope";
  CHECK_THROWS_AS(read_json_file(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(write_json_file("/nonexistent_dir/q/x.json", j), IoError);
  CHECK_THROWS_WITH_AS(require_keys_subset(Json{{"x", 1}, {"zz", 2}}, {"x"}, "thing"), doctest::Contains("zz"),
                       ConfigError);
}
