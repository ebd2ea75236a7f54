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

#include "chanprune/json_io.hpp"

#include <fstream>
#include <sstream>

#include "chanprune/error.hpp"

namespace chanprune {

namespace {

template <typename T>
T get(const Json& j, std::string_view key, std::string_view where) {
  try {
    return j.at(std::string(key)).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + ": bad or missing '" + std::string(key) + "': " + e.what());
  }
}

template <typename T>
void get_opt(const Json& j, std::string_view key, T& out, std::string_view where) {
  if (j.contains(std::string(key))) out = get<T>(j, key, where);
}

void require_object(const Json& j, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
}

}  // namespace

void require_keys_subset(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

Json to_json(const ChannelConfig& cfg) {
  Json j = Json::object();
  for (const auto& [id, c] : cfg.channels) j[id] = c;
  return j;
}

ChannelConfig channel_config_from_json(const Json& j) {
  require_object(j, "channel config");
  ChannelConfig cfg;
  for (const auto& [id, c] : j.items()) {
    if (!c.is_number_integer()) throw ConfigError("channel config: '" + id + "' is not an integer");
    cfg.channels[id] = c.get<std::int64_t>();
  }
  return cfg;
}

Json to_json(const CostReport& r) {
  Json layers = Json::array();
  for (const auto& [id, c] : r.per_layer) {
    const auto sp = r.spatial.count(id) ? r.spatial.at(id) : std::pair<std::int64_t, std::int64_t>{0, 0};
    layers.push_back({{"id", id}, {"flops", c.flops}, {"params", c.params}, {"out_hw", {sp.first, sp.second}}});
  }
  return {{"flops", r.flops}, {"params", r.params}, {"layers", layers}};
}

Json to_json(const ImportanceVector& v) {
  Json blocks = Json::array();
  for (const auto& e : v.entries) {
    blocks.push_back({{"id", e.block_id}, {"mean_abs_gamma", e.mean_abs_gamma}, {"importance", e.importance}});
  }
  return {{"blocks", blocks}, {"spread", v.entries.empty() ? 0.0 : importance_spread(v)}};
}

ImportanceVector importance_from_json(const Json& j) {
  require_keys_subset(j, {"blocks", "spread"}, "importance");
  ImportanceVector v;
  for (const auto& b : get<Json>(j, "blocks", "importance")) {
    require_keys_subset(b, {"id", "mean_abs_gamma", "importance"}, "importance block");
    v.entries.push_back({get<std::string>(b, "id", "importance block"), get<double>(b, "mean_abs_gamma", "importance block"),
                         get<double>(b, "importance", "importance block")});
  }
  return v;
}

Json to_json(const Budget& b) {
  Json j;
  if (b.kind == Budget::Kind::fraction_of_baseline) {
    j["target_flops_ratio"] = b.target;
  } else {
    j["target_flops"] = static_cast<std::int64_t>(b.target);
  }
  j["tolerance"] = b.tolerance;
  j["interval"] = {b.interval_lo, b.interval_hi};
  j["max_iters"] = b.max_iters;
  return j;
}

Budget budget_from_json(const Json& j, Budget base) {
  constexpr std::string_view where = "budget";
  require_keys_subset(j, {"target_flops_ratio", "target_flops", "tolerance", "interval", "max_iters"}, where);
  if (j.contains("target_flops_ratio") && j.contains("target_flops")) {
    throw ConfigError("budget: give target_flops_ratio or target_flops, not both");
  }
  if (j.contains("target_flops_ratio")) {
    base.kind = Budget::Kind::fraction_of_baseline;
    base.target = get<double>(j, "target_flops_ratio", where);
  }
  if (j.contains("target_flops")) {
    base.kind = Budget::Kind::absolute_flops;
    base.target = static_cast<double>(get<std::int64_t>(j, "target_flops", where));
  }
  get_opt(j, "tolerance", base.tolerance, where);
  get_opt(j, "max_iters", base.max_iters, where);
  if (j.contains("interval")) {
    const auto iv = get<std::vector<double>>(j, "interval", where);
    if (iv.size() != 2) throw ConfigError("budget: interval must be [lo, hi]");
    base.interval_lo = iv[0];
    base.interval_hi = iv[1];
  }
  return base;
}

Json to_json(const PruningPlan& p) {
  Json blocks = Json::array();
  for (std::size_t i = 0; i < p.block_ids.size(); ++i) {
    blocks.push_back({{"id", p.block_ids[i]}, {"keep_ratio", p.keep_ratios[i]}});
  }
  return {{"alpha", p.alpha},
          {"alpha_upper", p.alpha_upper},
          {"iterations", p.iterations},
          {"identity", p.identity},
          {"nearest_achievable", p.nearest_achievable},
          {"baseline_flops", p.baseline_flops},
          {"target_flops", p.target_flops},
          {"tolerance", p.tolerance},
          {"achieved_flops", p.achieved.flops},
          {"achieved_params", p.achieved.params},
          {"achieved_ratio", p.achieved_ratio()},
          {"blocks", blocks},
          {"config", to_json(p.config)}};
}

PruningPlan plan_from_json(const Json& j) {
  constexpr std::string_view where = "plan";
  require_object(j, where);
  PruningPlan p;
  p.alpha = get<double>(j, "alpha", where);
  get_opt(j, "alpha_upper", p.alpha_upper, where);
  get_opt(j, "iterations", p.iterations, where);
  get_opt(j, "identity", p.identity, where);
  get_opt(j, "nearest_achievable", p.nearest_achievable, where);
  get_opt(j, "baseline_flops", p.baseline_flops, where);
  get_opt(j, "target_flops", p.target_flops, where);
  get_opt(j, "tolerance", p.tolerance, where);
  get_opt(j, "achieved_flops", p.achieved.flops, where);
  get_opt(j, "achieved_params", p.achieved.params, where);
  if (j.contains("blocks")) {
    for (const auto& b : get<Json>(j, "blocks", where)) {
      p.block_ids.push_back(get<std::string>(b, "id", "plan block"));
      p.keep_ratios.push_back(get<double>(b, "keep_ratio", "plan block"));
    }
  }
  p.config = channel_config_from_json(get<Json>(j, "config", where));
  return p;
}

Json to_json(const TrainConfig& c) {
  Json lr;
  lr["schedule"] = c.lr.kind == LrSchedule::Kind::step ? "step" : "cosine";
  lr["initial"] = c.lr.initial;
  if (c.lr.kind == LrSchedule::Kind::step) {
    lr["drop_every"] = c.lr.drop_every;
    lr["factor"] = c.lr.factor;
  }
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"sparsity", c.sparsity},
          {"mode", c.mode == TrainMode::sparse ? "sparse" : "finetune"},
          {"augment", c.augment}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig base) {
  constexpr std::string_view where = "train config";
  require_keys_subset(j, {"epochs", "batch_size", "lr", "momentum", "weight_decay", "sparsity", "mode", "augment"},
                      where);
  get_opt(j, "epochs", base.epochs, where);
  get_opt(j, "batch_size", base.batch_size, where);
  get_opt(j, "momentum", base.momentum, where);
  get_opt(j, "weight_decay", base.weight_decay, where);
  get_opt(j, "sparsity", base.sparsity, where);
  get_opt(j, "augment", base.augment, where);
  if (j.contains("mode")) {
    const auto mode = get<std::string>(j, "mode", where);
    if (mode == "sparse") {
      base.mode = TrainMode::sparse;
    } else if (mode == "finetune") {
      base.mode = TrainMode::finetune;
    } else {
      throw ConfigError("train config: mode must be 'sparse' or 'finetune'");
    }
  }
  if (j.contains("lr")) {
    const Json& lr = j.at("lr");
    if (lr.is_number()) {
      base.lr.initial = lr.get<double>();
    } else {
      require_keys_subset(lr, {"schedule", "initial", "drop_every", "factor"}, "lr");
      if (lr.contains("schedule")) {
        const auto kind = get<std::string>(lr, "schedule", "lr");
        if (kind == "step") {
          base.lr.kind = LrSchedule::Kind::step;
        } else if (kind == "cosine") {
          base.lr.kind = LrSchedule::Kind::cosine;
        } else {
          throw ConfigError("lr: schedule must be 'step' or 'cosine'");
        }
      }
      get_opt(lr, "initial", base.lr.initial, "lr");
      get_opt(lr, "drop_every", base.lr.drop_every, "lr");
      get_opt(lr, "factor", base.lr.factor, "lr");
    }
  }
  base.check();
  return base;
}

Json to_json(const EpochMetrics& m) {
  Json blocks = Json::object();
  for (const auto& [id, v] : m.block_mean_abs_gamma) blocks[id] = v;
  return {{"epoch", m.epoch},         {"lr", m.lr}, {"loss", m.loss}, {"accuracy", m.accuracy},
          {"mean_abs_gamma", m.mean_abs_gamma}, {"block_mean_abs_gamma", blocks}};
}

Json to_json(const InheritanceOutcome& o) {
  Json table = Json::array();
  for (const auto& [c, acc] : o.accuracies) table.push_back({{"criterion", to_string(c)}, {"accuracy", acc}});
  return {{"chosen", to_string(o.chosen)}, {"accuracies", table}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace chanprune
