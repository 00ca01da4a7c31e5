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

#include "dytox/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

namespace dytox {

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
    if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), cells_(tasks * tasks) {}

const AccuracyMatrix::Cell& AccuracyMatrix::cell(std::size_t step, std::size_t task) const {
    if (step >= tasks_ || task > step) throw std::out_of_range("accuracy matrix: cell outside the lower triangle");
    return cells_[step * tasks_ + task];
}

void AccuracyMatrix::record(std::size_t step, std::size_t task, std::size_t correct, std::size_t total) {
    if (total == 0 || correct > total) throw std::invalid_argument("accuracy matrix: need 0 <= correct <= total, total > 0");
    cell(step, task);
    cells_[step * tasks_ + task] = Cell{correct, total, true};
}

bool AccuracyMatrix::populated(std::size_t step, std::size_t task) const { return cell(step, task).set; }

bool AccuracyMatrix::step_complete(std::size_t step) const {
    for (std::size_t j = 0; j <= step; ++j)
        if (!populated(step, j)) return false;
    return true;
}

std::size_t AccuracyMatrix::completed_steps() const {
    std::size_t k = 0;
    while (k < tasks_ && step_complete(k)) ++k;
    return k;
}

double AccuracyMatrix::at(std::size_t step, std::size_t task) const {
    const auto& c = cell(step, task);
    if (!c.set) throw std::invalid_argument("accuracy matrix: cell not populated");
    return static_cast<double>(c.correct) / static_cast<double>(c.total);
}

double AccuracyMatrix::pooled(std::size_t step) const {
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t j = 0; j <= step; ++j) {
        const auto& c = cell(step, j);
        if (!c.set) throw std::invalid_argument("accuracy matrix: step " + std::to_string(step) + " is incomplete");
        correct += c.correct;
        total += c.total;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

AccuracyMatrix AccuracyMatrix::prefix(std::size_t steps) const {
    if (steps > tasks_) throw std::invalid_argument("accuracy matrix: prefix longer than the matrix");
    AccuracyMatrix out(steps);
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t j = 0; j <= k; ++j) out.cells_[k * steps + j] = cells_[k * tasks_ + j];
    return out;
}

std::vector<std::vector<double>> AccuracyMatrix::values() const {
    std::vector<std::vector<double>> out(tasks_, std::vector<double>(tasks_, 0.0));
    for (std::size_t k = 0; k < tasks_; ++k)
        for (std::size_t j = 0; j <= k; ++j)
            if (populated(k, j)) out[k][j] = at(k, j);
    return out;
}

double avg_accuracy(std::span<const double> pooled_per_step) {
    if (pooled_per_step.empty()) throw std::invalid_argument("avg_accuracy: no steps");
    return std::accumulate(pooled_per_step.begin(), pooled_per_step.end(), 0.0) /
           static_cast<double>(pooled_per_step.size());
}

double avg_accuracy(const AccuracyMatrix& m) {
    if (m.tasks() == 0 || m.completed_steps() != m.tasks()) throw std::invalid_argument("avg_accuracy: incomplete matrix");
    std::vector<double> pooled;
    for (std::size_t k = 0; k < m.tasks(); ++k) pooled.push_back(m.pooled(k));
    return avg_accuracy(pooled);
}

double last_accuracy(const AccuracyMatrix& m) {
    if (m.tasks() == 0) throw std::invalid_argument("last_accuracy: empty matrix");
    return m.pooled(m.tasks() - 1);
}

double forgetting(const std::vector<std::vector<double>>& a) {
    const std::size_t t = a.size();
    if (t < 2) throw std::invalid_argument("forgetting: needs at least two steps");
    for (const auto& row : a)
        if (row.size() < t) throw std::invalid_argument("forgetting: matrix is not square");
    double total = 0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        double best = a[j][j];
        for (std::size_t l = j + 1; l + 1 < t; ++l) best = std::max(best, a[l][j]);
        total += best - a[t - 1][j];
    }
    return total / static_cast<double>(t - 1);
}

double forgetting(const AccuracyMatrix& m) {
    if (m.completed_steps() != m.tasks()) throw std::invalid_argument("forgetting: incomplete matrix");
    return forgetting(m.values());
}

template <typename T>
OverheadReport overhead_report(const DyToxModel<T>& model, const Tensor<T>* probe, std::size_t reps) {
    OverheadReport r;
    r.tasks = model.num_tasks();
    const auto counts = count_params(model);
    r.params_total = counts.total();
    r.token_delta = model.config().token_expansion ? model.config().embed_dim : 0;
    if (r.tasks > 0 && model.config().independent_heads) {
        const auto& h = model.heads.back();
        r.task_delta = r.token_delta + h.linear.weight.size() + (h.linear.bias ? h.linear.bias->size() : 0) +
                       h.norm.gain.size() + h.norm.bias.size();
    } else {
        r.task_delta = r.token_delta;
    }
    r.token_ratio = r.params_total ? static_cast<double>(r.token_delta) / static_cast<double>(r.params_total) : 0.0;
    const auto flops = count_flops(model);
    r.flops_total = flops.total(r.tasks);
    r.flops_per_task = flops.tab_per_task;
    r.flop_ratio = static_cast<double>(flops.tab_per_task) / static_cast<double>(flops.total(1));

    if (probe != nullptr && r.tasks > 0) {
        using clock = std::chrono::steady_clock;
        for (std::size_t k = 1; k <= r.tasks; ++k) {
            double best = 0;
            for (std::size_t rep = 0; rep < std::max<std::size_t>(reps, 1); ++rep) {
                const auto start = clock::now();
                (void)model.predict(*probe, k);
                const double s = std::chrono::duration<double>(clock::now() - start).count();
                best = rep == 0 ? s : std::min(best, s);
            }
            r.forward_seconds.push_back(best);
        }
        for (std::size_t k = 1; k < r.forward_seconds.size(); ++k) {
            r.time_ratio.push_back((r.forward_seconds[k] - r.forward_seconds[k - 1]) / r.forward_seconds[0]);
        }
    }
    return r;
}

template OverheadReport overhead_report<float>(const DyToxModel<float>&, const Tensor<float>*, std::size_t);
template OverheadReport overhead_report<double>(const DyToxModel<double>&, const Tensor<double>*, std::size_t);

}  // namespace dytox
