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

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "chanprune/cost_model.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/inheritance.hpp"
#include "chanprune/planner.hpp"
#include "chanprune/trainer.hpp"

namespace chanprune {

using Json = nlohmann::ordered_json;

Json to_json(const ChannelConfig& cfg);
ChannelConfig channel_config_from_json(const Json& j);

Json to_json(const CostReport& r);
Json to_json(const ImportanceVector& v);
ImportanceVector importance_from_json(const Json& j);

Json to_json(const Budget& b);
/// Fields absent from `j` keep the values already in `base`.
Budget budget_from_json(const Json& j, Budget base = {});

/// achieved holds totals only; per-layer costs are not serialized.
Json to_json(const PruningPlan& p);
PruningPlan plan_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

Json to_json(const EpochMetrics& m);

Json to_json(const InheritanceOutcome& o);

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void require_keys_subset(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace chanprune
