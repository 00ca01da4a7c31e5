// Copyright 2026 The dytox-cpp Authors
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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dytox/data.hpp"
#include "dytox/losses.hpp"
#include "dytox/metrics.hpp"
#include "dytox/model.hpp"
#include "dytox/training.hpp"

namespace dytox {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | cifar100
    SyntheticBlobConfig synthetic;
    std::string cifar_train;
    std::string cifar_test;
};

struct Toggles {
    bool mixup = false;
    bool kd = true;
    bool divergence = true;
    bool independent_heads = true;
    bool token_expansion = true;
    bool balanced_finetune = true;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelConfig model;  // token_expansion / independent_heads come from toggles
    TrainSchedule schedule;
    std::size_t num_steps = 5;
    std::uint64_t class_order_seed = 1993;
    std::size_t memory_budget = 2000;
    double lambda_div = 0.1;
    double mixup_alpha = 0.8;
    KdMode kd_mode = KdMode::bce;
    double kd_temperature = 1.0;
    Toggles toggles;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    bool save_checkpoint = true;

    /// Throws ConfigError naming the offending key path.
    void validate() const;
};

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_file(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

struct StepSummary {
    std::size_t step = 0;  // 1-based
    std::size_t classes_seen = 0;
    double alpha = 0;
    std::size_t params_total = 0;
    std::size_t tokens = 0;
    std::size_t heads = 0;
    bool used_kd = false;
    bool used_divergence = false;
    bool used_mixup = false;
    bool finetuned = false;
    std::size_t train_steps = 0;
    double final_loss = 0;
    double final_clf = 0;
    double final_kd = 0;
    double final_div = 0;
    std::size_t memory_size = 0;
    double pooled_accuracy = 0;
};

struct ExperimentResult {
    MetricsReport report;
    AccuracyMatrix matrix;
    std::vector<StepSummary> steps;
    std::vector<double> train_seconds;  // per step
    std::vector<double> epoch_seconds;  // mean main-phase epoch time per step
    std::optional<DyToxModel<float>> model;
};

struct Datasets {
    LabeledDataset train;
    LabeledDataset test;
};

Datasets load_datasets(const DatasetSpec& spec);

/// Expand, snapshot the teacher, train (with finetune), update memory and
/// evaluate, once per step. Outputs are rewritten after every step. `log`
/// receives one progress line per step when non-null.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

/// Summary metrics over the completed steps.
MetricsReport summarize(const AccuracyMatrix& matrix);

nlohmann::json metrics_json(const ExperimentResult& result);
/// metrics.json, accuracy_matrix.csv, curve.csv and timings.json.
void emit_metrics(const ExperimentResult& result, const std::filesystem::path& dir);

}  // namespace dytox
