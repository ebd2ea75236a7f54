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

#include "chanprune/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "chanprune/builtin_arch.hpp"
#include "chanprune/engine.hpp"
#include "chanprune/error.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/rng.hpp"

namespace chanprune {

namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::sparse_train: return "sparse-train";
    case Stage::importance: return "importance";
    case Stage::plan: return "plan";
    case Stage::inherit: return "inherit";
    case Stage::finetune: return "finetune";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  if (name == "sparse-train" || name == "sparse_train") return Stage::sparse_train;
  if (name == "importance") return Stage::importance;
  if (name == "plan") return Stage::plan;
  if (name == "inherit") return Stage::inherit;
  if (name == "finetune") return Stage::finetune;
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

StageError::StageError(Stage stage, const std::string& message)
    : Error("stage " + std::string(to_string(stage)) + ": " + message), stage_(stage) {}

namespace {

DataSlice to_slice(Batch b, const DataSlice& like, std::string name) {
  DataSlice d;
  d.images = std::move(b.images);
  d.labels = std::move(b.labels);
  d.name = std::move(name);
  d.normalization = like.normalization;
  d.num_classes = like.num_classes;
  return d;
}

}  // namespace

Datasets load_datasets(const DatasetSpec& spec, std::uint64_t seed) {
  Datasets out;
  if (spec.kind == DatasetSpec::Kind::synthetic) {
    auto split = synthetic_dataset(spec.num_classes, spec.per_class, spec.shape, spec.noise, seed);
    out.train = std::move(split.train);
    out.val = std::move(split.val);
  } else {
    out.train = load_cifar10(spec.dir, Split::train);
    out.val = load_cifar10(spec.dir, Split::test);
  }
  if (spec.train_limit > 0) out.train = head(out.train, spec.train_limit);
  if (spec.val_limit > 0) out.val = head(out.val, spec.val_limit);
  if (spec.calib_size < 1) throw ConfigError("dataset.calib_size must be >= 1");
  const std::int64_t n = std::min(spec.calib_size, out.train.size());
  if (n == 0) throw ConfigError("training split is empty");
  // The synthetic train split is class-ordered, so draw a shuffled subset.
  const BatchSampler pick(out.train, n, derive_seed(seed, 7));
  out.calib = to_slice(pick[0], out.train, out.train.name + "-calib");
  return out;
}

std::uint64_t component_seed(const PipelineConfig& c, SeedStream stream) {
  return derive_seed(c.seed, static_cast<std::uint64_t>(stream));
}

namespace {

TrainConfig checked_train_config(const Json& j, TrainConfig base, TrainMode expected, std::string_view where) {
  TrainConfig c = train_config_from_json(j, base);
  if (c.mode != expected) {
    throw ConfigError(std::string(where) + ".mode must be '" + (expected == TrainMode::sparse ? "sparse" : "finetune") + "'");
  }
  return c;
}

template <typename T>
void opt(const Json& j, const char* key, T& out, const char* where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + ": bad '" + key + "': " + e.what());
  }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const Json& j) {
  require_keys_subset(j, {"arch", "manifest", "blob", "dataset", "sparse_train", "budget", "inheritance", "finetune",
                          "out_dir", "seed"},
                      "pipeline config");
  PipelineConfig c;
  opt(j, "arch", c.arch, "pipeline config");
  std::string path;
  if (j.contains("manifest")) {
    opt(j, "manifest", path, "pipeline config");
    c.manifest = path;
  }
  if (j.contains("blob")) {
    opt(j, "blob", path, "pipeline config");
    c.blob = path;
  }
  if (c.manifest.empty() != c.blob.empty()) throw ConfigError("pipeline config: give both manifest and blob, or neither");
  if (j.contains("out_dir")) {
    opt(j, "out_dir", path, "pipeline config");
    c.out_dir = path;
  }
  opt(j, "seed", c.seed, "pipeline config");
  opt(j, "inheritance", c.inheritance, "pipeline config");
  if (c.inheritance != "adaptive") c.inheritance = std::string(to_string(parse_criterion(c.inheritance)));

  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    require_keys_subset(d, {"kind", "dir", "num_classes", "per_class", "shape", "noise", "calib_size", "train_limit",
                            "val_limit"},
                        "dataset");
    std::string kind = "synthetic";
    opt(d, "kind", kind, "dataset");
    if (kind == "synthetic") {
      c.dataset.kind = DatasetSpec::Kind::synthetic;
    } else if (kind == "cifar10") {
      c.dataset.kind = DatasetSpec::Kind::cifar10;
      c.dataset.num_classes = 10;
      c.dataset.shape = {3, 32, 32};
    } else {
      throw ConfigError("dataset.kind must be 'synthetic' or 'cifar10'");
    }
    if (d.contains("dir")) {
      opt(d, "dir", path, "dataset");
      c.dataset.dir = path;
    }
    opt(d, "num_classes", c.dataset.num_classes, "dataset");
    opt(d, "per_class", c.dataset.per_class, "dataset");
    opt(d, "noise", c.dataset.noise, "dataset");
    opt(d, "calib_size", c.dataset.calib_size, "dataset");
    opt(d, "train_limit", c.dataset.train_limit, "dataset");
    opt(d, "val_limit", c.dataset.val_limit, "dataset");
    if (d.contains("shape")) {
      std::vector<std::int64_t> shape;
      opt(d, "shape", shape, "dataset");
      if (shape.size() != 3) throw ConfigError("dataset.shape must be [C, H, W]");
      c.dataset.shape = {shape[0], shape[1], shape[2]};
    }
    if (c.dataset.kind == DatasetSpec::Kind::cifar10 &&
        (c.dataset.num_classes != 10 || c.dataset.shape != InputShape{3, 32, 32})) {
      throw ConfigError("dataset: cifar10 is fixed at 10 classes of 3x32x32");
    }
  }
  if (j.contains("sparse_train")) {
    c.sparse_train = checked_train_config(j.at("sparse_train"), c.sparse_train, TrainMode::sparse, "sparse_train");
  }
  if (j.contains("finetune")) {
    c.finetune = checked_train_config(j.at("finetune"), c.finetune, TrainMode::finetune, "finetune");
  }
  if (j.contains("budget")) c.budget = budget_from_json(j.at("budget"), c.budget);
  return c;
}

Json to_json(const PipelineConfig& c) {
  Json d;
  d["kind"] = c.dataset.kind == DatasetSpec::Kind::synthetic ? "synthetic" : "cifar10";
  if (c.dataset.kind == DatasetSpec::Kind::cifar10) {
    d["dir"] = c.dataset.dir.string();
  } else {
    d["num_classes"] = c.dataset.num_classes;
    d["per_class"] = c.dataset.per_class;
    d["shape"] = {c.dataset.shape.channels, c.dataset.shape.height, c.dataset.shape.width};
    d["noise"] = c.dataset.noise;
  }
  d["calib_size"] = c.dataset.calib_size;
  d["train_limit"] = c.dataset.train_limit;
  d["val_limit"] = c.dataset.val_limit;
  Json j;
  j["arch"] = c.arch;
  if (!c.manifest.empty()) {
    j["manifest"] = c.manifest.string();
    j["blob"] = c.blob.string();
  }
  j["dataset"] = d;
  j["sparse_train"] = to_json(c.sparse_train);
  j["budget"] = to_json(c.budget);
  j["inheritance"] = c.inheritance;
  j["finetune"] = to_json(c.finetune);
  j["out_dir"] = c.out_dir.string();
  j["seed"] = c.seed;
  return j;
}

PipelineConfig load_pipeline_config(const fs::path& path) { return pipeline_config_from_json(read_json_file(path)); }

Json to_json(const PipelineReport& r) {
  Json table = Json::array();
  for (const auto& [c, acc] : r.recalibrated) table.push_back({{"criterion", to_string(c)}, {"accuracy", acc}});
  return {{"baseline_flops", r.baseline_flops},
          {"achieved_flops", r.achieved_flops},
          {"baseline_params", r.baseline_params},
          {"achieved_params", r.achieved_params},
          {"target_ratio", r.target_ratio},
          {"flops_ratio", r.flops_ratio},
          {"alpha", r.alpha},
          {"nearest_achievable", r.nearest_achievable},
          {"sparse_accuracy", r.sparse_accuracy},
          {"chosen_criterion", to_string(r.chosen)},
          {"recalibrated", table},
          {"recalibrated_accuracy", r.recalibrated_accuracy},
          {"final_accuracy", r.final_accuracy}};
}

Json to_json(const AblationTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"criterion", to_string(r.criterion)}, {"recalibrated", r.recalibrated}, {"final", r.final}});
  }
  return {{"rows", rows}, {"spearman", t.spearman}, {"plan", to_json(t.plan)}};
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("spearman: sequences differ in length");
  const std::size_t n = a.size();
  auto ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

namespace {

template <typename F>
auto in_stage(Stage stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

void write_metrics(const fs::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& m : history) out << to_json(m).dump() << '\n';
}

ModelSnapshot load_artifact(const fs::path& dir, const char* manifest, const char* blob) {
  if (!fs::exists(dir / manifest) || !fs::exists(dir / blob)) {
    throw IoError("missing artifact '" + (dir / manifest).string() + "'; run the earlier stages first");
  }
  return load_snapshot(dir / manifest, dir / blob);
}

struct Prepared {
  Datasets data;
  ModelSnapshot sparse;
  ImportanceVector importance;
  PruningPlan plan;
  double sparse_accuracy = 0.0;
};

// Stages up to and including plan.
Prepared prepare(const PipelineConfig& cfg, Stage from, Stage to, std::ostream* log) {
  Prepared p;
  const fs::path& dir = cfg.out_dir;
  in_stage(from, [&] {
    fs::create_directories(dir);
    write_json_file(dir / "config.json", to_json(cfg));
    p.data = load_datasets(cfg.dataset, component_seed(cfg, SeedStream::data));
  });
  say(log, "data: train " + std::to_string(p.data.train.size()) + ", calib " + std::to_string(p.data.calib.size()) +
               ", val " + std::to_string(p.data.val.size()));

  p.sparse = in_stage(Stage::sparse_train, [&] {
    if (from > Stage::sparse_train) return load_artifact(dir, artifact::kSparseManifest, artifact::kSparseBlob);
    ModelSnapshot start = cfg.manifest.empty()
                              ? builtin_arch(cfg.arch, p.data.train.num_classes, cfg.dataset.shape,
                                             component_seed(cfg, SeedStream::arch))
                              : load_snapshot(cfg.manifest, cfg.blob);
    if (start.num_classes != p.data.train.num_classes) {
      throw ConfigError("model has " + std::to_string(start.num_classes) + " classes, dataset has " +
                        std::to_string(p.data.train.num_classes));
    }
    TrainConfig tc = cfg.sparse_train;
    tc.seed = component_seed(cfg, SeedStream::sparse_train);
    auto r = train(start, p.data.train, tc, [&](const EpochMetrics& m) {
      say(log, "sparse-train epoch " + std::to_string(m.epoch) + " loss " + std::to_string(m.loss) + " acc " +
                   std::to_string(m.accuracy));
    });
    save_snapshot(r.snapshot, dir / artifact::kSparseManifest, dir / artifact::kSparseBlob);
    write_metrics(dir / artifact::kSparseMetrics, r.history);
    return std::move(r.snapshot);
  });
  p.sparse_accuracy = in_stage(Stage::sparse_train, [&] { return evaluate_accuracy(p.sparse, p.data.val); });
  if (to == Stage::sparse_train) return p;

  p.importance = in_stage(Stage::importance, [&] {
    if (from > Stage::importance) return importance_from_json(read_json_file(dir / artifact::kImportance));
    auto v = block_importance(p.sparse);
    write_json_file(dir / artifact::kImportance, to_json(v));
    return v;
  });
  if (to == Stage::importance) return p;

  p.plan = in_stage(Stage::plan, [&] {
    if (from > Stage::plan) {
      auto plan = plan_from_json(read_json_file(dir / artifact::kPlan));
      plan.achieved = evaluate_cost(p.sparse, plan.config);
      return plan;
    }
    auto plan = bisect_alpha(p.sparse, p.importance, cfg.budget);
    write_json_file(dir / artifact::kPlan, to_json(plan));
    say(log, "plan: alpha " + std::to_string(plan.alpha) + ", flops ratio " + std::to_string(plan.achieved_ratio()));
    return plan;
  });
  return p;
}

TrainResult finetune(const PipelineConfig& cfg, const ModelSnapshot& s, const DataSlice& train_data,
                     std::ostream* log) {
  TrainConfig tc = cfg.finetune;
  tc.seed = component_seed(cfg, SeedStream::finetune);
  return train(s, train_data, tc, [&](const EpochMetrics& m) {
    say(log, "finetune epoch " + std::to_string(m.epoch) + " loss " + std::to_string(m.loss) + " acc " +
                 std::to_string(m.accuracy));
  });
}

void fill_plan_fields(PipelineReport& report, const Prepared& p) {
  const CostReport base = baseline_cost(p.sparse);
  report.baseline_flops = base.flops;
  report.baseline_params = base.params;
  report.achieved_flops = p.plan.achieved.flops;
  report.achieved_params = p.plan.achieved.params;
  report.target_ratio = p.plan.baseline_flops == 0 ? 1.0 : p.plan.target_flops / static_cast<double>(p.plan.baseline_flops);
  report.flops_ratio = base.flops == 0 ? 1.0 : static_cast<double>(p.plan.achieved.flops) / static_cast<double>(base.flops);
  report.alpha = p.plan.alpha;
  report.nearest_achievable = p.plan.nearest_achievable;
}

}  // namespace

PipelineReport run_pipeline(const PipelineConfig& cfg, Stage from, Stage to, std::ostream* log) {
  if (to < from) throw ConfigError("last stage comes before the first");
  Prepared p = prepare(cfg, from, to, log);
  const fs::path& dir = cfg.out_dir;
  PipelineReport report;
  report.sparse_accuracy = p.sparse_accuracy;
  report.completed = to;
  if (to < Stage::plan) return report;
  in_stage(Stage::plan, [&] { fill_plan_fields(report, p); });
  if (to == Stage::plan) return report;

  const InheritanceOutcome inherited = in_stage(Stage::inherit, [&] {
    InheritanceOutcome o;
    if (from > Stage::inherit) {
      const Json j = read_json_file(dir / artifact::kInheritance);
      o.chosen = parse_criterion(j.at("chosen").get<std::string>());
      for (const auto& row : j.at("accuracies")) {
        o.accuracies.emplace_back(parse_criterion(row.at("criterion").get<std::string>()), row.at("accuracy").get<double>());
      }
      o.snapshot = load_artifact(dir, artifact::kInheritedManifest, artifact::kInheritedBlob);
      return o;
    }
    const auto seed = component_seed(cfg, SeedStream::inherit);
    if (cfg.inheritance == "adaptive") {
      o = adaptive_inherit(p.sparse, p.plan.config, p.data.calib, p.data.val, seed);
    } else {
      auto r = evaluate_criterion(p.sparse, p.plan.config, parse_criterion(cfg.inheritance), p.data.calib, p.data.val,
                                  seed);
      o.chosen = r.criterion;
      o.accuracies.emplace_back(r.criterion, r.accuracy);
      o.snapshot = std::move(r.snapshot);
    }
    write_json_file(dir / artifact::kInheritance, to_json(o));
    save_snapshot(o.snapshot, dir / artifact::kInheritedManifest, dir / artifact::kInheritedBlob);
    say(log, "inherit: chose " + std::string(to_string(o.chosen)));
    return o;
  });
  report.chosen = inherited.chosen;
  report.recalibrated = inherited.accuracies;
  for (const auto& [c, acc] : inherited.accuracies) {
    if (c == inherited.chosen) report.recalibrated_accuracy = acc;
  }
  if (to == Stage::inherit) return report;

  const ModelSnapshot final_model = in_stage(Stage::finetune, [&] {
    auto r = finetune(cfg, inherited.snapshot, p.data.train, log);
    save_snapshot(r.snapshot, dir / artifact::kFinalManifest, dir / artifact::kFinalBlob);
    write_metrics(dir / artifact::kFinetuneMetrics, r.history);
    return std::move(r.snapshot);
  });

  in_stage(Stage::finetune, [&] {
    // Measured on the final model rather than copied from the plan.
    const CostReport achieved = baseline_cost(final_model);
    report.achieved_flops = achieved.flops;
    report.achieved_params = achieved.params;
    report.flops_ratio = report.baseline_flops == 0
                             ? 1.0
                             : static_cast<double>(achieved.flops) / static_cast<double>(report.baseline_flops);
    report.final_accuracy = evaluate_accuracy(final_model, p.data.val);
    write_json_file(dir / artifact::kReport, to_json(report));
  });
  say(log, "final accuracy " + std::to_string(report.final_accuracy) + ", flops ratio " +
               std::to_string(report.flops_ratio));
  return report;
}

AblationTable run_ablation(const PipelineConfig& cfg, Stage from, std::ostream* log) {
  if (from > Stage::plan) throw ConfigError("ablation can resume from sparse-train, importance or plan only");
  Prepared p = prepare(cfg, from, Stage::plan, log);
  AblationTable table;
  table.plan = p.plan;
  in_stage(Stage::inherit, [&] {
    for (Criterion c : kAllCriteria) {
      auto r = evaluate_criterion(p.sparse, p.plan.config, c, p.data.calib, p.data.val,
                                  component_seed(cfg, SeedStream::inherit));
      say(log, "ablation " + std::string(to_string(c)) + ": recalibrated " + std::to_string(r.accuracy));
      auto ft = in_stage(Stage::finetune, [&] { return finetune(cfg, r.snapshot, p.data.train, log); });
      const double final_acc = in_stage(Stage::finetune, [&] { return evaluate_accuracy(ft.snapshot, p.data.val); });
      say(log, "ablation " + std::string(to_string(c)) + ": final " + std::to_string(final_acc));
      table.rows.push_back({c, r.accuracy, final_acc});
    }
  });
  std::vector<double> re, fin;
  for (const auto& r : table.rows) {
    re.push_back(r.recalibrated);
    fin.push_back(r.final);
  }
  table.spearman = spearman(re, fin);
  in_stage(Stage::finetune, [&] { write_json_file(cfg.out_dir / artifact::kAblation, to_json(table)); });
  return table;
}

}  // namespace chanprune
