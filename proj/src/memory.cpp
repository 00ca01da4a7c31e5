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

#include "dytox/memory.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dytox {

std::vector<std::size_t> herding_select(std::span<const double> features, std::size_t n, std::size_t dim, std::size_t m) {
    if (features.size() != n * dim) throw std::invalid_argument("herding_select: feature buffer is not n x dim");
    if (m > n) {
        throw std::invalid_argument("herding_select: cannot pick " + std::to_string(m) + " of " + std::to_string(n) +
                                    " samples");
    }
    std::vector<double> mu(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) mu[d] += features[i * dim + d];
    for (auto& v : mu) v /= static_cast<double>(n);

    std::vector<double> running(dim, 0.0);
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> order;
    order.reserve(m);
    for (std::size_t k = 1; k <= m; ++k) {
        std::size_t best = n;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            double dist = 0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = mu[d] - (features[i * dim + d] + running[d]) / static_cast<double>(k);
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = i;
            }
        }
        taken[best] = true;
        order.push_back(best);
        for (std::size_t d = 0; d < dim; ++d) running[d] += features[best * dim + d];
    }
    return order;
}

std::size_t RehearsalMemory::size() const {
    std::size_t n = 0;
    for (const auto& [label, idx] : exemplars) n += idx.size();
    return n;
}

std::size_t RehearsalMemory::per_class_budget(std::size_t classes_seen) const {
    if (classes_seen == 0) throw std::invalid_argument("per_class_budget: no classes seen");
    return budget / classes_seen;
}

std::vector<std::size_t> RehearsalMemory::indices() const {
    std::vector<std::size_t> out;
    out.reserve(size());
    for (const auto& [label, idx] : exemplars) out.insert(out.end(), idx.begin(), idx.end());
    return out;
}

void RehearsalMemory::shrink_to(std::size_t m) {
    for (auto& [label, idx] : exemplars)
        if (idx.size() > m) idx.resize(m);
}

template <typename T>
void memory_update(RehearsalMemory& memory, const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                   const DyToxModel<T>& model, std::size_t task, std::size_t batch_size) {
    if (memory.budget == 0) return;
    if (task >= model.num_tasks()) throw std::invalid_argument("memory_update: model has not learned this task");
    std::size_t seen = 0;
    for (std::size_t i = 0; i <= task; ++i) seen += scenario.task_classes.at(i).size();
    const std::size_t m = memory.per_class_budget(seen);
    memory.shrink_to(m);

    const std::size_t dim = model.config().embed_dim;
    for (int label : scenario.task_classes.at(task)) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < train.size(); ++i)
            if (train.labels[i] == label) members.push_back(i);
        std::vector<double> feats(members.size() * dim);
        for (std::size_t start = 0; start < members.size(); start += batch_size) {
            const std::size_t count = std::min(batch_size, members.size() - start);
            const auto images = gather_images<T>(train, std::span(members).subspan(start, count));
            const auto e = model.embed(images, task);
            for (std::size_t r = 0; r < count; ++r) {
                double norm = 0;
                for (std::size_t d = 0; d < dim; ++d) norm += static_cast<double>(e.at(r, d)) * e.at(r, d);
                norm = std::sqrt(norm);
                if (norm == 0) norm = 1;
                for (std::size_t d = 0; d < dim; ++d) feats[(start + r) * dim + d] = e.at(r, d) / norm;
            }
        }
        const std::size_t take = std::min(m, members.size());
        auto order = herding_select(feats, members.size(), dim, take);
        auto& slot = memory.exemplars[label];
        slot.clear();
        for (std::size_t o : order) slot.push_back(members[o]);
    }
}

template void memory_update<float>(RehearsalMemory&, const LabeledDataset&, const ClassIncrementalScenario&,
                                   const DyToxModel<float>&, std::size_t, std::size_t);
template void memory_update<double>(RehearsalMemory&, const LabeledDataset&, const ClassIncrementalScenario&,
                                    const DyToxModel<double>&, std::size_t, std::size_t);

}  // namespace dytox
