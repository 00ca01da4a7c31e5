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

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <set>

#include "doctest.h"
#include "dytox/data.hpp"
#include "dytox/memory.hpp"
#include "dytox/training.hpp"
#include "support.hpp"

using namespace dytox;

namespace {

LabeledDataset labelled(std::size_t classes, std::size_t per_class) {
    LabeledDataset d;
    d.channels = 1;
    d.height = 1;
    d.width = 1;
    for (std::size_t k = 0; k < classes; ++k) d.class_names.push_back(std::to_string(k));
    for (std::size_t i = 0; i < per_class; ++i)
        for (std::size_t k = 0; k < classes; ++k) {
            d.labels.push_back(static_cast<int>(k));
            d.pixels.push_back(0.0f);
        }
    return d;
}

}  // namespace

TEST_CASE("scenario") {
    const auto hundred = build_scenario(labelled(100, 2), 10, 1993);
    CHECK(hundred.num_tasks() == 10);
    for (const auto& t : hundred.task_classes) CHECK(t.size() == 10);

    const auto data = labelled(10, 3);
    const auto s = build_scenario(data, 5, 7);
    CHECK(s.class_counts() == std::vector<std::size_t>(5, 2));
    std::set<int> seen;
    for (const auto& t : s.task_classes)
        for (int c : t) CHECK(seen.insert(c).second);
    CHECK(seen.size() == 10);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(s.task_indices[t].size() == 6);
        CHECK(s.indices_for(data, t) == s.task_indices[t]);
        for (auto i : s.task_indices[t]) CHECK(s.task_of_global(s.global_class(data.labels[i])) == t);
        CHECK(s.task_offset(t) == 2 * t);
    }

    const auto again = build_scenario(data, 5, 7);
    CHECK(again.class_order == s.class_order);
    CHECK(again.task_indices == s.task_indices);
    CHECK(build_scenario(data, 5, 8).class_order != s.class_order);
    CHECK_THROWS_AS(build_scenario(data, 3, 7), std::invalid_argument);
    CHECK_THROWS_AS(s.global_class(10), std::invalid_argument);
}

TEST_CASE("CIFAR-100 binary records") {
    const auto dir = dytox::testing::scratch_dir("cifar");
    std::vector<unsigned char> bytes(2 * 3074, 0);
    bytes[0] = 7;   // coarse
    bytes[1] = 42;  // fine
    bytes[3074] = 1;
    bytes[3075] = 99;
    for (std::size_t p = 0; p < 3072; ++p) bytes[3076 + p] = static_cast<unsigned char>(p % 256);
    bytes[3076 + 1024 + 33] = 255;  // green channel, row 1, column 1
    const auto path = dir / "fixture.bin";
    std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));

    const auto d = load_cifar100_binary(path);
    CHECK(d.size() == 2);
    CHECK(d.labels == std::vector<int>{42, 99});
    CHECK(d.num_classes() == 100);
    CHECK_NOTHROW(d.validate());
    for (float v : d.image(0)) CHECK(v == 0.0f);
    const auto img = d.image(1);
    for (std::size_t p = 0; p < 3072; ++p) {
        const unsigned char raw = p == 1024 + 33 ? 255 : static_cast<unsigned char>(p % 256);
        CHECK(img[p] == static_cast<float>(raw) / 255.0f);
    }

    auto bad = bytes;
    bad.pop_back();
    std::ofstream(dir / "short.bin", std::ios::binary).write(reinterpret_cast<const char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_AS(load_cifar100_binary(dir / "short.bin"), std::runtime_error);
    bad = bytes;
    bad[1] = 100;
    std::ofstream(dir / "label.bin", std::ios::binary).write(reinterpret_cast<const char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_AS(load_cifar100_binary(dir / "label.bin"), std::runtime_error);
    CHECK_THROWS_AS(load_cifar100_binary(dir / "missing.bin"), std::runtime_error);
}

TEST_CASE("synthetic generator") {
    SyntheticBlobConfig c;
    c.num_classes = 3;
    c.image_size = 8;
    c.samples_per_class = 5;
    c.noise_std = 0.0;
    const auto clean = gen_synthetic(c);
    CHECK(clean.size() == 15);
    CHECK_NOTHROW(clean.validate());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const auto ref = clean.image(static_cast<std::size_t>(clean.labels[i]));
        const auto img = clean.image(i);
        CHECK(std::equal(img.begin(), img.end(), ref.begin()));
    }

    c.noise_std = 0.2;
    const auto a = gen_synthetic(c), b = gen_synthetic(c);
    CHECK(a.pixels == b.pixels);
    CHECK(a.labels == b.labels);
    for (float v : a.pixels) CHECK((v >= 0.0f && v <= 1.0f));
    const auto test = gen_synthetic(c, Split::test);
    CHECK(test.size() == 3 * c.test_samples_per_class);
    CHECK(!std::equal(test.pixels.begin(), test.pixels.begin() + 64, a.pixels.begin()));

    c.image_size = 10;
    CHECK_THROWS_AS(gen_synthetic(c), std::invalid_argument);
}

TEST_CASE("a linear probe separates two synthetic classes") {
    SyntheticBlobConfig c;
    c.num_classes = 2;
    c.image_size = 16;
    c.noise_std = 0.1;
    c.samples_per_class = 100;
    c.test_samples_per_class = 100;
    c.seed = 4;
    const auto train = gen_synthetic(c, Split::train);
    const auto test = gen_synthetic(c, Split::test);
    const auto f = static_cast<Eigen::Index>(train.image_size());

    auto design = [&](const LabeledDataset& d) {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(d.size()), f + 1);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const auto img = d.image(i);
            for (Eigen::Index j = 0; j < f; ++j) x(static_cast<Eigen::Index>(i), j) = img[static_cast<std::size_t>(j)];
            x(static_cast<Eigen::Index>(i), f) = 1.0;
        }
        return x;
    };
    const Eigen::MatrixXd x = design(train);
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) y(i) = train.labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
    const Eigen::MatrixXd gram = x.transpose() * x + 1e-2 * Eigen::MatrixXd::Identity(f + 1, f + 1);
    const Eigen::VectorXd w = gram.ldlt().solve(x.transpose() * y);

    const Eigen::VectorXd scores = design(test) * w;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i)
        correct += (scores(i) > 0) == (test.labels[static_cast<std::size_t>(i)] == 1);
    const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
    MESSAGE("probe accuracy " << acc);
    CHECK(acc >= 0.95);
}

TEST_CASE("task stream contents") {
    SyntheticBlobConfig c;
    c.num_classes = 4;
    c.image_size = 8;
    c.samples_per_class = 6;
    const auto data = gen_synthetic(c);
    const auto s = build_scenario(data, 2, 3);

    RehearsalMemory empty;
    const auto first = task_loader(s, 0, empty, 4, 1);
    CHECK(first.indices == s.task_indices[0]);

    RehearsalMemory memory;
    memory.budget = 4;
    for (int label : s.task_classes[0]) {
        std::vector<std::size_t> ex;
        for (auto i : s.task_indices[0])
            if (data.labels[i] == label && ex.size() < 2) ex.push_back(i);
        memory.exemplars[label] = ex;
    }
    const auto second = task_loader(s, 1, memory, 4, 1);
    std::multiset<std::size_t> got(second.indices.begin(), second.indices.end());
    std::multiset<std::size_t> want(s.task_indices[1].begin(), s.task_indices[1].end());
    for (auto i : memory.indices()) want.insert(i);
    CHECK(got == want);
    std::set<int> labels;
    for (auto i : second.indices) labels.insert(data.labels[i]);
    std::set<int> classes(s.class_order.begin(), s.class_order.end());
    CHECK(labels == classes);
}
