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
#include <optional>
#include <span>
#include <vector>

#include "dytox/model.hpp"

namespace dytox {

/// Exact-match fraction. Throws on empty or unequal inputs.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Cell (k, j) holds the correct/total counts on task j's test split after
/// step k, for j <= k. Steps and tasks are 0-based.
class AccuracyMatrix {
   public:
    explicit AccuracyMatrix(std::size_t tasks = 0);

    std::size_t tasks() const { return tasks_; }
    void record(std::size_t step, std::size_t task, std::size_t correct, std::size_t total);
    bool populated(std::size_t step, std::size_t task) const;
    bool step_complete(std::size_t step) const;
    /// Number of leading steps whose row is fully populated.
    std::size_t completed_steps() const;

    double at(std::size_t step, std::size_t task) const;
    /// Accuracy over the pooled test samples of tasks 0..step.
    double pooled(std::size_t step) const;
    /// Copy restricted to the first `steps` steps and tasks.
    AccuracyMatrix prefix(std::size_t steps) const;
    /// Dense lower-triangular values, 0 where unpopulated.
    std::vector<std::vector<double>> values() const;

   private:
    struct Cell {
        std::size_t correct = 0;
        std::size_t total = 0;
        bool set = false;
    };
    const Cell& cell(std::size_t step, std::size_t task) const;

    std::size_t tasks_;
    std::vector<Cell> cells_;
};

/// Mean of the pooled per-step accuracies.
double avg_accuracy(std::span<const double> pooled_per_step);
double avg_accuracy(const AccuracyMatrix& m);
double last_accuracy(const AccuracyMatrix& m);

/// Mean over j < T-1 of max_{l < T-1} a[l][j] - a[T-1][j]. `a` is square and
/// lower-triangular with T >= 2 rows.
double forgetting(const std::vector<std::vector<double>>& a);
double forgetting(const AccuracyMatrix& m);

struct OverheadReport {
    std::size_t tasks = 0;
    std::size_t params_total = 0;
    std::size_t token_delta = 0;      // parameters of one task token
    std::size_t task_delta = 0;       // token plus the newest head
    double token_ratio = 0;           // token_delta / params_total
    std::size_t flops_total = 0;      // total(tasks)
    std::size_t flops_per_task = 0;   // tab_per_task
    double flop_ratio = 0;            // tab_per_task / total(1)
    std::vector<double> forward_seconds;  // forward time with 1..tasks tasks
    std::vector<double> time_ratio;       // (time(k) - time(k-1)) / time(1), k >= 2
};

/// Parameter and MAC overheads of `model`. With a probe batch, also times
/// forwards restricted to 1..t tasks (best of `reps`).
template <typename T>
OverheadReport overhead_report(const DyToxModel<T>& model, const Tensor<T>* probe = nullptr, std::size_t reps = 3);

struct MetricsReport {
    std::size_t tasks = 0;
    double avg_acc = 0;
    double last_acc = 0;
    std::optional<double> forgetting;
    std::vector<double> pooled;  // per step
    std::size_t memory_size = 0;
    std::size_t max_memory_size = 0;
    OverheadReport overhead;
};

}  // namespace dytox
