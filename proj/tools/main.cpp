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

// chanprune command-line driver.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "chanprune/builtin_arch.hpp"
#include "chanprune/cost_model.hpp"
#include "chanprune/engine.hpp"
#include "chanprune/error.hpp"
#include "chanprune/json_io.hpp"
#include "chanprune/pipeline.hpp"

namespace cp = chanprune;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string from_stage;
  bool quiet = false;
};

struct BudgetFlags {
  std::optional<double> ratio;
  std::optional<std::int64_t> flops;
  std::optional<double> tolerance;
  std::optional<double> lo;
  std::optional<double> hi;
  std::optional<int> max_iters;
};

void add_common(CLI::App* app, Common& c, bool with_from_stage) {
  app->add_option("--config", c.config, "pipeline config (JSON)");
  app->add_option("--seed", c.seed, "global seed; overrides the config");
  app->add_option("--out-dir", c.out_dir, "artifact directory; overrides the config");
  if (with_from_stage) {
    app->add_option("--from-stage", c.from_stage, "resume at sparse-train|importance|plan|inherit|finetune");
  }
  app->add_flag("-q,--quiet", c.quiet, "no progress lines on stderr");
}

void add_budget(CLI::App* app, BudgetFlags& b) {
  auto* ratio = app->add_option("--target-flops-ratio", b.ratio, "target FLOPs as a fraction of the baseline");
  auto* abs = app->add_option("--target-flops", b.flops, "absolute FLOPs target");
  ratio->excludes(abs);
  app->add_option("--tolerance", b.tolerance, "relative FLOPs tolerance");
  app->add_option("--interval-lo", b.lo, "initial alpha interval, left end");
  app->add_option("--interval-hi", b.hi, "initial alpha interval, right end");
  app->add_option("--max-iters", b.max_iters, "bisection iteration cap");
}

cp::PipelineConfig resolve(const Common& c, const BudgetFlags* b = nullptr) {
  cp::PipelineConfig cfg;
  try {
    if (!c.config.empty()) cfg = cp::load_pipeline_config(c.config);
  } catch (const cp::Error& e) {
    throw cp::Error(std::string("stage config: ") + e.what());
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (b) {
    if (b->ratio) {
      cfg.budget.kind = cp::Budget::Kind::fraction_of_baseline;
      cfg.budget.target = *b->ratio;
    }
    if (b->flops) {
      cfg.budget.kind = cp::Budget::Kind::absolute_flops;
      cfg.budget.target = static_cast<double>(*b->flops);
    }
    if (b->tolerance) cfg.budget.tolerance = *b->tolerance;
    if (b->lo) cfg.budget.interval_lo = *b->lo;
    if (b->hi) cfg.budget.interval_hi = *b->hi;
    if (b->max_iters) cfg.budget.max_iters = *b->max_iters;
  }
  return cfg;
}

cp::Stage from_stage(const Common& c) {
  if (c.from_stage.empty()) return cp::Stage::sparse_train;
  try {
    return cp::parse_stage(c.from_stage);
  } catch (const cp::Error& e) {
    throw cp::Error(std::string("stage config: ") + e.what());
  }
}

void print(const cp::Json& j) { std::cout << j.dump(2) << std::endl; }

std::ostream* progress(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

// Stage subcommand: runs exactly one stage over the out_dir artifacts and
// prints that stage's artifact.
void run_single(const Common& c, cp::Stage stage, const BudgetFlags* b, const std::string& criterion) {
  auto cfg = resolve(c, b);
  if (!criterion.empty()) cfg.inheritance = criterion;
  const auto report = cp::run_pipeline(cfg, stage, stage, progress(c));
  namespace a = cp::artifact;
  switch (stage) {
    case cp::Stage::sparse_train:
      print({{"sparse_model", (cfg.out_dir / a::kSparseManifest).string()},
             {"val_accuracy", report.sparse_accuracy}});
      break;
    case cp::Stage::importance:
      print(cp::read_json_file(cfg.out_dir / a::kImportance));
      break;
    case cp::Stage::plan:
      print(cp::read_json_file(cfg.out_dir / a::kPlan));
      break;
    case cp::Stage::inherit:
      print(cp::read_json_file(cfg.out_dir / a::kInheritance));
      break;
    case cp::Stage::finetune:
      print(cp::read_json_file(cfg.out_dir / a::kReport));
      break;
  }
}

cp::InputShape parse_shape(const std::string& text) {
  cp::InputShape s;
  if (std::sscanf(text.c_str(), "%ldx%ldx%ld", &s.channels, &s.height, &s.width) != 3) {
    throw cp::ConfigError("input shape must look like 3x32x32");
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted channel pruning for small convolutional networks"};
  app.require_subcommand(1);

  Common common;
  BudgetFlags budget;
  std::string criterion;
  std::string manifest, blob, plan_path, model = "final";
  std::string arch, shape = "3x32x32";
  std::int64_t num_classes = 10;
  std::uint64_t init_seed = 0;

  auto* sparse = app.add_subcommand("sparse-train", "train with the L1 penalty on prunable BN gammas");
  add_common(sparse, common, false);

  auto* importance = app.add_subcommand("importance", "block importances of the sparse model");
  add_common(importance, common, false);

  auto* plan = app.add_subcommand("plan", "solve for a channel configuration meeting the FLOPs budget");
  add_common(plan, common, false);
  add_budget(plan, budget);

  auto* inherit = app.add_subcommand("inherit", "build the pruned model under an inheritance criterion");
  add_common(inherit, common, false);
  inherit->add_option("--criterion", criterion, "l1|bn|gm|random|adaptive")
      ->check(CLI::IsMember({"l1", "bn", "gm", "random", "adaptive", "l1_norm", "bn_weights", "geometric_median",
                             "random_init"}));

  auto* finetune = app.add_subcommand("finetune", "fine-tune the inherited model and write the report");
  add_common(finetune, common, false);

  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a model on the validation split");
  add_common(eval, common, false);
  eval->add_option("--model", model, "sparse|inherited|final artifact in out_dir")
      ->check(CLI::IsMember({"sparse", "inherited", "final"}));
  eval->add_option("--manifest", manifest, "explicit model manifest (overrides --model)");
  eval->add_option("--blob", blob, "explicit model blob");

  auto* report = app.add_subcommand("report", "FLOPs and parameter counts of a model");
  report->add_option("--manifest", manifest, "model manifest")->required();
  report->add_option("--blob", blob, "model blob")->required();
  report->add_option("--plan", plan_path, "cost of this plan's channel configuration instead");

  auto* pipeline = app.add_subcommand("pipeline", "sparse-train, importance, plan, inherit, finetune");
  add_common(pipeline, common, true);
  add_budget(pipeline, budget);
  pipeline->add_option("--criterion", criterion, "l1|bn|gm|random|adaptive");

  auto* ablation = app.add_subcommand("ablation", "every criterion on one plan: recalibrated and final accuracy");
  add_common(ablation, common, true);
  add_budget(ablation, budget);

  auto* init = app.add_subcommand("init", "write a freshly initialized builtin architecture");
  init->add_option("--arch", arch, "architecture name")->required();
  init->add_option("--num-classes", num_classes, "classifier width");
  init->add_option("--input", shape, "input shape CxHxW");
  init->add_option("--seed", init_seed, "initializer seed");
  init->add_option("--manifest", manifest, "output manifest")->required();
  init->add_option("--blob", blob, "output blob")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sparse) {
      run_single(common, cp::Stage::sparse_train, nullptr, "");
    } else if (*importance) {
      run_single(common, cp::Stage::importance, nullptr, "");
    } else if (*plan) {
      run_single(common, cp::Stage::plan, &budget, "");
    } else if (*inherit) {
      run_single(common, cp::Stage::inherit, nullptr, criterion);
    } else if (*finetune) {
      run_single(common, cp::Stage::finetune, nullptr, "");
    } else if (*eval) {
      const auto cfg = resolve(common);
      cp::ModelSnapshot s;
      if (!manifest.empty()) {
        s = cp::load_snapshot(manifest, blob);
      } else {
        const std::string stem = model + "_model";
        s = cp::load_snapshot(cfg.out_dir / (stem + ".json"), cfg.out_dir / (stem + ".bin"));
      }
      const auto data = cp::load_datasets(cfg.dataset, cp::component_seed(cfg, cp::SeedStream::data));
      print({{"accuracy", cp::evaluate_accuracy(s, data.val)}, {"samples", data.val.size()}});
    } else if (*report) {
      const auto s = cp::load_snapshot(manifest, blob);
      const cp::ChannelConfig cfg =
          plan_path.empty() ? cp::original_config(s) : cp::plan_from_json(cp::read_json_file(plan_path)).config;
      auto j = cp::to_json(cp::evaluate_cost(s, cfg));
      j["baseline_flops"] = cp::baseline_cost(s).flops;
      print(j);
    } else if (*pipeline) {
      auto cfg = resolve(common, &budget);
      if (!criterion.empty()) cfg.inheritance = criterion;
      print(cp::to_json(cp::run_pipeline(cfg, from_stage(common), cp::Stage::finetune, progress(common))));
    } else if (*ablation) {
      const auto cfg = resolve(common, &budget);
      print(cp::to_json(cp::run_ablation(cfg, from_stage(common), progress(common))));
    } else if (*init) {
      const auto s = cp::builtin_arch(arch, num_classes, parse_shape(shape), init_seed);
      cp::save_snapshot(s, manifest, blob);
      print({{"arch", arch}, {"layers", s.layers.size()}, {"blocks", s.blocks.size()},
             {"flops", cp::baseline_cost(s).flops}});
    }
  } catch (const std::exception& e) {
    // Pipeline failures already carry their stage; tag the rest with the subcommand.
    const std::string what = e.what();
    const bool tagged = what.rfind("stage ", 0) == 0;
    std::cerr << "error: " << (tagged ? "" : "stage " + app.get_subcommands().front()->get_name() + ": ") << what
              << '\n';
    return 1;
  }
  return 0;
}
