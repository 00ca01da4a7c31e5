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
#include <map>
#include <span>
#include <vector>

#include "dytox/data.hpp"
#include "dytox/model.hpp"

namespace dytox {

/// iCaRL herding over `n` row-major feature vectors of length `dim`. Returns
/// `m` distinct indices in selection order. Ties go to the lowest index.
std::vector<std::size_t> herding_select(std::span<const double> features, std::size_t n, std::size_t dim, std::size_t m);

/// Exemplars per dataset label under one global budget. Each list is kept in
/// herding order so shrinking a class keeps its best-ranked prefix.
struct RehearsalMemory {
    std::size_t budget = 0;
    std::map<int, std::vector<std::size_t>> exemplars;

    std::size_t size() const;
    std::size_t num_classes() const { return exemplars.size(); }
    std::size_t per_class_budget(std::size_t classes_seen) const;
    /// All stored dataset indices, ordered by label then herding rank.
    std::vector<std::size_t> indices() const;
    /// Truncates every class to at most `m` exemplars.
    void shrink_to(std::size_t m);
};

/// After training the 0-based task `task`: shrinks old classes to
/// budget / classes_seen and herds that many exemplars for every new class,
/// using the L2-normalized task embedding e_task as the feature.
template <typename T>
void memory_update(RehearsalMemory& memory, const LabeledDataset& train, const ClassIncrementalScenario& scenario,
                   const DyToxModel<T>& model, std::size_t task, std::size_t batch_size = 256);

}  // namespace dytox
