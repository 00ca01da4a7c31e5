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

#include <cmath>
#include <set>

#include "doctest.h"
#include "dytox/memory.hpp"
#include "dytox/training.hpp"
#include "support.hpp"

using namespace dytox;

namespace {

// Exhaustive greedy: at every step score every remaining candidate.
std::vector<std::size_t> brute_force_herding(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t m) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mu[c] += x[i * d + c];
    for (auto& v : mu) v /= static_cast<double>(n);
    std::vector<double> acc(d, 0.0);
    std::vector<std::size_t> picked;
    for (std::size_t k = 1; k <= m; ++k) {
        double best = INFINITY;
        std::size_t arg = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
            double dist = 0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = mu[c] - (acc[c] + x[i * d + c]) / static_cast<double>(k);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = i;
            }
        }
        picked.push_back(arg);
        for (std::size_t c = 0; c < d; ++c) acc[c] += x[arg * d + c];
    }
    return picked;
}

std::vector<double> normalized_features(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0, 1);
    std::vector<double> x(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0;
        for (std::size_t c = 0; c < d; ++c) norm += (x[i * d + c] = g(rng)) * x[i * d + c];
        for (std::size_t c = 0; c < d; ++c) x[i * d + c] /= std::sqrt(norm);
    }
    return x;
}

}  // namespace

TEST_CASE("herding selection") {
    std::mt19937_64 rng(1);
    const auto x = normalized_features(6, 4, rng);
    const auto all = herding_select(x, 6, 4, 6);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 6);

    std::vector<double> mu(4, 0.0);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 4; ++c) mu[c] += x[i * 4 + c] / 6;
    std::size_t closest = 0;
    double best = INFINITY;
    for (std::size_t i = 0; i < 6; ++i) {
        double dist = 0;
        for (std::size_t c = 0; c < 4; ++c) dist += (x[i * 4 + c] - mu[c]) * (x[i * 4 + c] - mu[c]);
        if (dist < best) best = dist, closest = i;
    }
    CHECK(herding_select(x, 6, 4, 1) == std::vector<std::size_t>{closest});

    const auto x8 = normalized_features(8, 3, rng);
    CHECK(herding_select(x8, 8, 3, 3) == brute_force_herding(x8, 8, 3, 3));

    // Identical features tie everywhere: lowest index first.
    const std::vector<double> same(5 * 2, 0.5);
    CHECK(herding_select(same, 5, 2, 3) == std::vector<std::size_t>{0, 1, 2});

    CHECK_THROWS_AS(herding_select(x8, 8, 3, 9), std::invalid_argument);
}

TEST_CASE("herding matches the brute-force oracle on random instances") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> pick_n(1, 12), pick_d(1, 6);
    int mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = pick_n(rng), d = pick_d(rng);
        const std::size_t m = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(5, n))(rng);
        const auto x = normalized_features(n, d, rng);
        mismatches += herding_select(x, n, d, m) != brute_force_herding(x, n, d, m);
    }
    CHECK(mismatches == 0);
}

TEST_CASE("memory budget") {
    RehearsalMemory mem;
    mem.budget = 20;
    CHECK(mem.per_class_budget(2) == 10);
    CHECK(mem.per_class_budget(4) == 5);
    CHECK(mem.per_class_budget(3) == 6);
    mem.exemplars[3] = {9, 4, 7, 1, 2};
    mem.exemplars[1] = {5, 6, 8};
    CHECK(mem.size() == 8);
    CHECK(mem.indices() == std::vector<std::size_t>{5, 6, 8, 9, 4, 7, 1, 2});
    mem.shrink_to(2);
    CHECK(mem.exemplars[3] == std::vector<std::size_t>{9, 4});
    CHECK(mem.exemplars[1] == std::vector<std::size_t>{5, 6});
}

TEST_CASE("memory update over a pipeline") {
    SyntheticBlobConfig c;
    c.num_classes = 4;
    c.image_size = 16;
    c.samples_per_class = 16;
    c.seed = 5;
    const auto train = gen_synthetic(c);
    const auto scenario = build_scenario(train, 2, 3);
    Rng rng(6);
    DyToxModel<float> model(dytox::testing::toy_config(), rng);

    RehearsalMemory mem;
    mem.budget = 20;
    model.expand_task(2, rng);
    memory_update(mem, train, scenario, model, 0);
    CHECK(mem.size() == 20);
    CHECK(mem.num_classes() == 2);
    std::map<int, std::vector<std::size_t>> first = mem.exemplars;
    for (const auto& [label, ex] : first) {
        CHECK(ex.size() == 10);
        for (auto i : ex) CHECK(train.labels[i] == label);
        CHECK(std::set<std::size_t>(ex.begin(), ex.end()).size() == ex.size());
    }

    model.expand_task(2, rng);
    memory_update(mem, train, scenario, model, 1);
    CHECK(mem.size() <= 20);
    CHECK(mem.num_classes() == 4);
    for (const auto& [label, ex] : mem.exemplars) CHECK(ex.size() == 5);
    for (const auto& [label, ex] : first)
        CHECK(std::equal(mem.exemplars[label].begin(), mem.exemplars[label].end(), ex.begin()));

    // Herding order equals the selection over the class's L2-normalized embeddings.
    const int label = scenario.task_classes[1][0];
    std::vector<std::size_t> idx;
    for (auto i : scenario.task_indices[1])
        if (train.labels[i] == label) idx.push_back(i);
    const auto emb = model.embed(gather_images<float>(train, idx), 1);
    std::vector<double> feats(emb.data.begin(), emb.data.end());
    const std::size_t d = emb.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        double norm = 0;
        for (std::size_t k = 0; k < d; ++k) norm += feats[i * d + k] * feats[i * d + k];
        for (std::size_t k = 0; k < d; ++k) feats[i * d + k] /= std::sqrt(norm);
    }
    const auto order = herding_select(feats, idx.size(), d, 5);
    for (std::size_t r = 0; r < 5; ++r) CHECK(mem.exemplars[label][r] == idx[order[r]]);

    RehearsalMemory none;
    memory_update(none, train, scenario, model, 1);
    CHECK(none.size() == 0);
}
