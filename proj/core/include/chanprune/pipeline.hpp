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
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chanprune/data.hpp"
#include "chanprune/error.hpp"
#include "chanprune/inheritance.hpp"
#include "chanprune/json_io.hpp"
#include "chanprune/planner.hpp"
#include "chanprune/trainer.hpp"

namespace chanprune {

enum class Stage { sparse_train, importance, plan, inherit, finetune };

std::string_view to_string(Stage s);
/// Accepts "sparse-train" and "sparse_train" spellings.
Stage parse_stage(std::string_view name);

/// A failure inside one pipeline stage; what() starts with "stage <name>: ".
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& message);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct DatasetSpec {
  enum class Kind { synthetic, cifar10 };

  Kind kind = Kind::synthetic;
  /// cifar10: directory holding the binary batch files.
  std::filesystem::path dir;
  std::int64_t num_classes = 4;
  std::int64_t per_class = 250;
  InputShape shape{3, 16, 16};
  double noise = 0.3;
  /// Images drawn (seeded, without replacement) from train for BN recalibration.
  std::int64_t calib_size = 2048;
  /// Optional caps, 0 meaning no cap; handy for short CIFAR smoke runs.
  std::int64_t train_limit = 0;
  std::int64_t val_limit = 0;
};

struct Datasets {
  DataSlice train;
  DataSlice calib;
  DataSlice val;
};

Datasets load_datasets(const DatasetSpec& spec, std::uint64_t seed);

struct PipelineConfig {
  std::string arch = "tiny_vgg";
  /// When both are set the starting model is loaded instead of built.
  std::filesystem::path manifest;
  std::filesystem::path blob;
  DatasetSpec dataset;
  TrainConfig sparse_train;
  Budget budget = Budget::fraction(0.5);
  /// "adaptive" or a single criterion name.
  std::string inheritance = "adaptive";
  TrainConfig finetune = [] {
    TrainConfig c;
    c.mode = TrainMode::finetune;
    c.sparsity = 0.0;
    return c;
  }();
  std::filesystem::path out_dir = "runs/default";
  std::uint64_t seed = 0;
};

PipelineConfig pipeline_config_from_json(const Json& j);
Json to_json(const PipelineConfig& c);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Seed of each seeded component, derived from the global seed.
enum class SeedStream : std::uint64_t { arch = 1, data = 2, sparse_train = 3, inherit = 4, finetune = 5 };
std::uint64_t component_seed(const PipelineConfig& c, SeedStream stream);

/// File names of the stage artifacts inside out_dir.
namespace artifact {
inline constexpr const char* kSparseManifest = "sparse_model.json";
inline constexpr const char* kSparseBlob = "sparse_model.bin";
inline constexpr const char* kSparseMetrics = "sparse_metrics.jsonl";
inline constexpr const char* kImportance = "importance.json";
inline constexpr const char* kPlan = "plan.json";
inline constexpr const char* kInheritance = "inheritance.json";
inline constexpr const char* kInheritedManifest = "inherited_model.json";
inline constexpr const char* kInheritedBlob = "inherited_model.bin";
inline constexpr const char* kFinalManifest = "final_model.json";
inline constexpr const char* kFinalBlob = "final_model.bin";
inline constexpr const char* kFinetuneMetrics = "finetune_metrics.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kAblation = "ablation.json";
}  // namespace artifact

struct PipelineReport {
  std::int64_t baseline_flops = 0;
  std::int64_t achieved_flops = 0;
  std::int64_t baseline_params = 0;
  std::int64_t achieved_params = 0;
  double target_ratio = 0.0;
  double flops_ratio = 0.0;
  double alpha = 0.0;
  bool nearest_achievable = false;
  double sparse_accuracy = 0.0;
  Criterion chosen = Criterion::l1_norm;
  std::vector<std::pair<Criterion, double>> recalibrated;
  double recalibrated_accuracy = 0.0;
  double final_accuracy = 0.0;
  /// Last stage that ran.
  Stage completed = Stage::finetune;
};

Json to_json(const PipelineReport& r);

/// Runs stages `from`..`to`; earlier stages' artifacts are read back from
/// out_dir. Stopping before finetune leaves the later report fields at
/// their defaults and writes no report file. Progress lines go to `log`.
PipelineReport run_pipeline(const PipelineConfig& cfg, Stage from = Stage::sparse_train,
                            Stage to = Stage::finetune, std::ostream* log = nullptr);

struct AblationRow {
  Criterion criterion = Criterion::l1_norm;
  double recalibrated = 0.0;
  double final = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  /// Rank correlation of the recalibrated and final columns.
  double spearman = 0.0;
  PruningPlan plan;
};

Json to_json(const AblationTable& t);

/// One fixed plan, every criterion: recalibrated and fine-tuned accuracy.
/// `from` may be sparse_train, importance or plan.
AblationTable run_ablation(const PipelineConfig& cfg, Stage from = Stage::sparse_train,
                           std::ostream* log = nullptr);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace chanprune
