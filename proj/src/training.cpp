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

#include "dytox/training.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace dytox {

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

bool in_old_task(const std::string& name, const std::string& group, std::size_t old_tasks) {
    for (std::size_t i = 0; i < old_tasks; ++i) {
        const std::string stem = group + "." + std::to_string(i);
        if (name == stem || starts_with(name, stem + ".")) return true;
    }
    return false;
}

}  // namespace

template <typename T>
FreezeMask freeze_policy(const DyToxModel<T>& model, Phase phase, std::size_t t, bool freeze_shared) {
    FreezeMask mask;
    for (const auto* p : model.parameters()) {
        const auto& n = p->name;
        const bool encoder = starts_with(n, "tokenizer.") || starts_with(n, "sab.");
        if (phase == Phase::finetune) {
            if (encoder) mask.names.insert(n);
            continue;
        }
        if (freeze_shared && (encoder || starts_with(n, "tab."))) mask.names.insert(n);
        if (t > 1) {
            // A shared token or joint classifier serves every task and stays trainable.
            if (model.config().token_expansion && in_old_task(n, "tokens", t - 1)) mask.names.insert(n);
            if (model.config().independent_heads && in_old_task(n, "heads", t - 1)) mask.names.insert(n);
        }
    }
    return mask;
}

template <typename T>
void apply_mask(DyToxModel<T>& model, const FreezeMask& mask) {
    for (auto* p : model.parameters()) p->requires_grad = !mask.contains(p->name);
}

void TrainSchedule::validate() const {
    if (epochs_per_task == 0) throw std::invalid_argument("schedule.epochs_per_task must be positive");
    if (batch_size == 0) throw std::invalid_argument("schedule.batch_size must be positive");
    if (!(base_lr >= 0)) throw std::invalid_argument("schedule.base_lr must be non-negative");
    if (!(finetune_lr >= 0)) throw std::invalid_argument("schedule.finetune_lr must be non-negative");
}

std::vector<std::vector<std::size_t>> TaskStream::epoch_batches(std::size_t epoch) const {
    if (batch_size == 0) throw std::invalid_argument("task stream: batch size must be positive");
    std::vector<std::size_t> order = indices;
    std::seed_seq seq{seed, static_cast<std::uint64_t>(task), static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

TaskStream task_loader(const ClassIncrementalScenario& scenario, std::size_t task, const RehearsalMemory& memory,
                       std::size_t batch_size, std::uint64_t seed) {
    if (task >= scenario.num_tasks()) throw std::invalid_argument("task_loader: task out of range");
    TaskStream s;
    s.indices = scenario.task_indices[task];
    const auto mem = memory.indices();
    s.indices.insert(s.indices.end(), mem.begin(), mem.end());
    s.batch_size = batch_size;
    s.seed = seed;
    s.task = task;
    return s;
}

namespace {

struct StepLosses {
    double total = 0;
    double clf = 0;
    double kd = 0;
    double div = 0;
};

template <typename T>
StepLosses train_step(DyToxModel<T>& model, const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                      std::size_t task, const std::vector<std::size_t>& batch, const DyToxModel<T>* teacher,
                      const TrainOptions& options, bool use_div, Rng& rng, AdamState<T>& adam, double lr) {
    std::vector<std::size_t> labels;
    labels.reserve(batch.size());
    for (std::size_t i : batch) labels.push_back(scenario.global_class(train.labels[i]));

    Tensor<T> images = gather_images<T>(train, batch);
    Tensor<T> targets = one_hot<T>(labels, model.num_classes());
    Tensor<T> div_targets;
    const std::size_t classes_t = scenario.task_classes[task].size();
    if (use_div) {
        div_targets = one_hot<T>(divergence_labels(labels, scenario.task_offset(task), classes_t), classes_t + 1);
    }
    if (options.mixup && batch.size() >= 2) {
        const auto plan = sample_mix_plan(batch.size(), options.mixup_alpha, rng);
        images = apply_mix(images, plan);
        targets = apply_mix(targets, plan);
        if (use_div) div_targets = apply_mix(div_targets, plan);
    }

    model.zero_grad();
    Tape<T> tape(true);
    const auto fwd = model.forward(tape, images);
    LossTerms<T> terms{bce_classification_loss(fwd.probs, targets), std::nullopt, std::nullopt};
    StepLosses out;
    out.clf = terms.clf.item();

    if (teacher != nullptr && options.kd) {
        const std::size_t old = teacher->num_classes();
        Tape<T> teacher_tape(false);
        const auto tf = teacher->forward(teacher_tape, images);
        if (options.kd_mode == KdMode::bce) {
            terms.kd = kd_loss(slice_cols(fwd.probs, 0, old), tf.probs.value());
        } else {
            terms.kd = kd_loss_softmax(slice_cols(fwd.logits, 0, old), tf.logits.value(), options.kd_temperature);
        }
        out.kd = terms.kd->item();
    }
    if (use_div) {
        terms.div = divergence_loss(model.divergence_logits(fwd), div_targets, task + 1);
        out.div = terms.div->item();
    }
    const double alpha = alpha_schedule(model.class_counts(), task + 1);
    const auto loss = total_loss(terms, alpha, options.lambda_div);
    out.total = loss.item();
    tape.backward(loss);
    adam_step(model.parameters(), adam, lr);
    return out;
}

template <typename T>
std::vector<EpochLog> run_phase(DyToxModel<T>& model, const LabeledDataset& train,
                                const ClassIncrementalScenario& scenario, std::size_t task, const TaskStream& stream,
                                const DyToxModel<T>* teacher, const TrainOptions& options, bool use_div,
                                const LrSchedule& lrs, Phase phase, std::uint64_t seed, std::size_t& steps) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(task), static_cast<std::uint64_t>(phase == Phase::main ? 0 : 1)};
    Rng rng(seq);
    AdamState<T> adam;
    std::vector<EpochLog> logs;
    for (std::size_t epoch = 0; epoch < lrs.total_epochs; ++epoch) {
        EpochLog log;
        log.phase = phase;
        log.epoch = epoch;
        log.lr = lrs.at(epoch);
        for (const auto& batch : stream.epoch_batches(epoch)) {
            const auto l = train_step(model, train, scenario, task, batch, teacher, options, use_div, rng, adam, log.lr);
            log.loss += l.total;
            log.clf += l.clf;
            log.kd += l.kd;
            log.div += l.div;
            ++log.batches;
            ++steps;
        }
        if (log.batches > 0) {
            const double n = static_cast<double>(log.batches);
            log.loss /= n;
            log.clf /= n;
            log.kd /= n;
            log.div /= n;
        }
        if (options.on_epoch_end) options.on_epoch_end(log);
        logs.push_back(log);
    }
    return logs;
}

}  // namespace

std::vector<std::size_t> build_balanced_set(const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                                            std::size_t task, const RehearsalMemory& memory, std::uint64_t seed) {
    if (memory.budget == 0 || memory.size() == 0) return {};
    const std::size_t seen = scenario.task_offset(task) + scenario.task_classes.at(task).size();
    std::size_t k = memory.per_class_budget(seen);

    std::map<int, std::vector<std::size_t>> members;
    for (int label : scenario.task_classes[task]) members[label];
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto it = members.find(train.labels[i]);
        if (it != members.end()) it->second.push_back(i);
    }
    for (const auto& [label, idx] : members) k = std::min(k, idx.size());
    for (const auto& [label, idx] : memory.exemplars) k = std::min(k, idx.size());

    std::vector<std::size_t> out;
    for (const auto& [label, idx] : memory.exemplars) out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::seed_seq seq{seed, static_cast<std::uint64_t>(task), std::uint64_t{2}};
    std::mt19937_64 rng(seq);
    for (auto& [label, idx] : members) {
        std::shuffle(idx.begin(), idx.end(), rng);
        out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

template <typename T>
std::vector<EpochLog> finetune_balanced(DyToxModel<T>& model, const LabeledDataset& train,
                                        const ClassIncrementalScenario& scenario, std::size_t task,
                                        const RehearsalMemory& memory, const DyToxModel<T>* teacher,
                                        const TrainSchedule& schedule, const TrainOptions& options) {
    if (task == 0) throw std::invalid_argument("finetune_balanced: needs an earlier task");
    TaskStream stream;
    stream.indices = build_balanced_set(train, scenario, task, memory, schedule.seed);
    stream.batch_size = schedule.batch_size;
    stream.seed = schedule.seed + 1;
    stream.task = task;
    if (stream.indices.empty() || schedule.finetune_epochs == 0) return {};

    apply_freeze_policy(model, Phase::finetune, task + 1);
    const LrSchedule lrs{schedule.finetune_lr, 0, schedule.finetune_epochs, DecayKind::cosine};
    std::size_t steps = 0;
    auto logs = run_phase(model, train, scenario, task, stream, teacher, options, false, lrs, Phase::finetune,
                          schedule.seed, steps);
    apply_mask(model, FreezeMask{});
    return logs;
}

template <typename T>
TaskResult<T> train_task(DyToxModel<T>& model, const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                         std::size_t task, const RehearsalMemory& memory, const DyToxModel<T>* teacher,
                         const TrainSchedule& schedule, const TrainOptions& options) {
    schedule.validate();
    if (model.num_tasks() != task + 1) {
        throw std::invalid_argument("train_task: model has " + std::to_string(model.num_tasks()) +
                                    " tasks, expected " + std::to_string(task + 1));
    }
    if (task > 0 && options.kd && teacher == nullptr) throw std::invalid_argument("train_task: KD needs a teacher");
    const auto stream = task_loader(scenario, task, memory, schedule.batch_size, schedule.seed);
    if (stream.indices.empty()) throw std::invalid_argument("train_task: empty task stream");

    TaskResult<T> result;
    result.used_kd = task > 0 && options.kd && teacher != nullptr;
    result.used_divergence = task > 0 && options.divergence && model.divergence.has_value();
    const DyToxModel<T>* kd_teacher = result.used_kd ? teacher : nullptr;

    apply_freeze_policy(model, Phase::main, task + 1, options.freeze_shared);
    const LrSchedule lrs{schedule.base_lr, schedule.warmup_epochs, schedule.epochs_per_task, DecayKind::cosine};
    result.epochs = run_phase(model, train, scenario, task, stream, kd_teacher, options, result.used_divergence, lrs,
                              Phase::main, schedule.seed, result.steps);
    apply_mask(model, FreezeMask{});

    if (task > 0 && options.balanced_finetune && memory.size() > 0) {
        auto ft = finetune_balanced(model, train, scenario, task, memory, kd_teacher, schedule, options);
        result.finetuned = !ft.empty();
        for (const auto& log : ft) result.steps += log.batches;
        result.epochs.insert(result.epochs.end(), ft.begin(), ft.end());
    }
    model.drop_divergence_head();
    model.zero_grad();
    result.teacher = model;
    return result;
}

template <typename T>
std::vector<std::size_t> predict_classes(const DyToxModel<T>& model, const LabeledDataset& data,
                                         std::span<const std::size_t> indices, std::size_t batch_size) {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, indices.size() - start);
        const auto probs = model.predict(gather_images<T>(data, indices.subspan(start, count)));
        for (std::size_t r = 0; r < count; ++r) {
            const auto row = probs.row(r);
            out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

template <typename T>
void evaluate_step(const DyToxModel<T>& model, const LabeledDataset& test, const ClassIncrementalScenario& scenario,
                   std::size_t step, AccuracyMatrix& matrix, std::size_t batch_size) {
    for (std::size_t j = 0; j <= step; ++j) {
        const auto idx = scenario.indices_for(test, j);
        if (idx.empty()) throw std::invalid_argument("evaluate_step: task " + std::to_string(j) + " has no test samples");
        const auto preds = predict_classes(model, test, idx, batch_size);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) correct += preds[i] == scenario.global_class(test.labels[idx[i]]);
        matrix.record(step, j, correct, idx.size());
    }
}

#define DYTOX_INSTANTIATE(T)                                                                                        \
    template FreezeMask freeze_policy(const DyToxModel<T>&, Phase, std::size_t, bool);                              \
    template void apply_mask(DyToxModel<T>&, const FreezeMask&);                                                    \
    template TaskResult<T> train_task(DyToxModel<T>&, const LabeledDataset&, const ClassIncrementalScenario&,       \
                                      std::size_t, const RehearsalMemory&, const DyToxModel<T>*,                    \
                                      const TrainSchedule&, const TrainOptions&);                                  \
    template std::vector<EpochLog> finetune_balanced(DyToxModel<T>&, const LabeledDataset&,                         \
                                                     const ClassIncrementalScenario&, std::size_t,                 \
                                                     const RehearsalMemory&, const DyToxModel<T>*,                  \
                                                     const TrainSchedule&, const TrainOptions&);                   \
    template std::vector<std::size_t> predict_classes(const DyToxModel<T>&, const LabeledDataset&,                  \
                                                      std::span<const std::size_t>, std::size_t);                   \
    template void evaluate_step(const DyToxModel<T>&, const LabeledDataset&, const ClassIncrementalScenario&,       \
                                std::size_t, AccuracyMatrix&, std::size_t);

DYTOX_INSTANTIATE(float)
DYTOX_INSTANTIATE(double)

#undef DYTOX_INSTANTIATE

}  // namespace dytox
