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
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dytox/data.hpp"
#include "dytox/losses.hpp"
#include "dytox/memory.hpp"
#include "dytox/metrics.hpp"
#include "dytox/model.hpp"
#include "dytox/optim.hpp"

namespace dytox {

enum class Phase { main, finetune };

/// Names of parameters excluded from optimization.
struct FreezeMask {
    std::set<std::string> names;
    bool contains(const std::string& name) const { return names.count(name) != 0; }
};

/// Main phase at step t (1-based) freezes the tokens and heads of tasks
/// before t. Finetune freezes the tokenizer and every SAB. With
/// `freeze_shared`, the main phase also freezes tokenizer, SABs and TAB.
template <typename T>
FreezeMask freeze_policy(const DyToxModel<T>& model, Phase phase, std::size_t t, bool freeze_shared = false);

/// Sets requires_grad = !mask.contains(name) on every parameter.
template <typename T>
void apply_mask(DyToxModel<T>& model, const FreezeMask& mask);

template <typename T>
FreezeMask apply_freeze_policy(DyToxModel<T>& model, Phase phase, std::size_t t, bool freeze_shared = false) {
    auto mask = freeze_policy(model, phase, t, freeze_shared);
    apply_mask(model, mask);
    return mask;
}

struct TrainSchedule {
    std::size_t epochs_per_task = 500;
    std::size_t warmup_epochs = 5;
    double base_lr = 5e-4;
    std::size_t finetune_epochs = 20;
    double finetune_lr = 5e-5;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Dataset indices of one step, reshuffled every epoch from (seed, task, epoch).
struct TaskStream {
    std::vector<std::size_t> indices;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    std::size_t task = 0;

    /// Fixed-size batches; a trailing single sample joins the previous batch.
    std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch) const;
};

/// Task data of the 0-based `task` followed by every memory exemplar.
TaskStream task_loader(const ClassIncrementalScenario& scenario, std::size_t task, const RehearsalMemory& memory,
                       std::size_t batch_size, std::uint64_t seed);

struct EpochLog {
    Phase phase = Phase::main;
    std::size_t epoch = 0;
    double lr = 0;
    double loss = 0;  // mean over batches
    double clf = 0;
    double kd = 0;
    double div = 0;
    std::size_t batches = 0;
};

struct TrainOptions {
    bool mixup = false;
    double mixup_alpha = 0.8;
    bool kd = true;
    KdMode kd_mode = KdMode::bce;
    double kd_temperature = 1.0;
    bool divergence = true;
    double lambda_div = 0.1;
    bool balanced_finetune = true;
    bool freeze_shared = false;
    std::function<void(const EpochLog&)> on_epoch_end;
};

template <typename T>
struct TaskResult {
    std::vector<EpochLog> epochs;
    std::size_t steps = 0;
    bool used_kd = false;
    bool used_divergence = false;
    bool finetuned = false;
    std::optional<DyToxModel<T>> teacher;  // snapshot after this task
};

/// Trains the 0-based `task` after expand_task. `teacher` is the model as it
/// was before expansion (null for the first task). Runs the main phase over
/// task data plus memory, then the balanced finetune when there is an
/// earlier task and a memory, then drops the divergence head.
template <typename T>
TaskResult<T> train_task(DyToxModel<T>& model, const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                         std::size_t task, const RehearsalMemory& memory, const DyToxModel<T>* teacher,
                         const TrainSchedule& schedule, const TrainOptions& options);

/// Memory exemplars plus new-class samples, every class cut to the same count
/// budget / classes_seen (or the smallest available class).
std::vector<std::size_t> build_balanced_set(const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                                            std::size_t task, const RehearsalMemory& memory, std::uint64_t seed);

template <typename T>
std::vector<EpochLog> finetune_balanced(DyToxModel<T>& model, const LabeledDataset& train,
                                        const ClassIncrementalScenario& scenario, std::size_t task,
                                        const RehearsalMemory& memory, const DyToxModel<T>* teacher,
                                        const TrainSchedule& schedule, const TrainOptions& options);

/// Argmax over the concatenated predictions, as global class indices.
template <typename T>
std::vector<std::size_t> predict_classes(const DyToxModel<T>& model, const LabeledDataset& data,
                                         std::span<const std::size_t> indices, std::size_t batch_size = 256);

/// Fills row `step` of the matrix with the model's accuracy on the test split
/// of every task 0..step.
template <typename T>
void evaluate_step(const DyToxModel<T>& model, const LabeledDataset& test, const ClassIncrementalScenario& scenario,
                   std::size_t step, AccuracyMatrix& matrix, std::size_t batch_size = 256);

}  // namespace dytox
