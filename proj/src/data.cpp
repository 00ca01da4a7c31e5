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

#include "dytox/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dytox {

void LabeledDataset::validate() const {
    if (pixels.size() != labels.size() * image_size()) throw std::invalid_argument("dataset: pixel count does not match labels");
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= class_names.size()) {
            throw std::invalid_argument("dataset: label " + std::to_string(l) + " outside the class table");
        }
    }
}

template <typename T>
Tensor<T> gather_images(const LabeledDataset& data, std::span<const std::size_t> indices) {
    const std::size_t f = data.image_size();
    Tensor<T> out(Shape{indices.size(), f});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto img = data.image(indices[i]);
        std::transform(img.begin(), img.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * f),
                       [](float v) { return static_cast<T>(v); });
    }
    return out;
}

template Tensor<float> gather_images<float>(const LabeledDataset&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const LabeledDataset&, std::span<const std::size_t>);

// ---------------------------------------------------------------------------

std::vector<std::size_t> ClassIncrementalScenario::class_counts() const {
    std::vector<std::size_t> out;
    for (const auto& c : task_classes) out.push_back(c.size());
    return out;
}

std::size_t ClassIncrementalScenario::task_offset(std::size_t task) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < task; ++i) off += task_classes.at(i).size();
    return off;
}

std::size_t ClassIncrementalScenario::global_class(int label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= class_index.size() || class_index[label] < 0) {
        throw std::invalid_argument("label " + std::to_string(label) + " is not part of the scenario");
    }
    return static_cast<std::size_t>(class_index[label]);
}

std::size_t ClassIncrementalScenario::task_of_global(std::size_t global) const {
    std::size_t off = 0;
    for (std::size_t t = 0; t < task_classes.size(); ++t) {
        off += task_classes[t].size();
        if (global < off) return t;
    }
    throw std::invalid_argument("global class index out of range");
}

std::vector<std::size_t> ClassIncrementalScenario::indices_for(const LabeledDataset& data, std::size_t task) const {
    const auto& classes = task_classes.at(task);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (std::find(classes.begin(), classes.end(), data.labels[i]) != classes.end()) out.push_back(i);
    }
    return out;
}

ClassIncrementalScenario build_scenario(const LabeledDataset& data, std::size_t num_steps, std::uint64_t class_order_seed) {
    const std::size_t k = data.num_classes();
    if (num_steps == 0 || k == 0 || k % num_steps != 0) {
        throw std::invalid_argument("build_scenario: " + std::to_string(k) + " classes cannot be split into " +
                                    std::to_string(num_steps) + " equal tasks");
    }
    ClassIncrementalScenario s;
    s.seed = class_order_seed;
    s.class_order.resize(k);
    std::iota(s.class_order.begin(), s.class_order.end(), 0);
    std::mt19937_64 rng(class_order_seed);
    std::shuffle(s.class_order.begin(), s.class_order.end(), rng);
    s.class_index.assign(k, -1);
    for (std::size_t g = 0; g < k; ++g) s.class_index[s.class_order[g]] = static_cast<int>(g);

    const std::size_t per = k / num_steps;
    for (std::size_t t = 0; t < num_steps; ++t) {
        s.task_classes.emplace_back(s.class_order.begin() + static_cast<std::ptrdiff_t>(t * per),
                                    s.class_order.begin() + static_cast<std::ptrdiff_t>((t + 1) * per));
    }
    s.task_indices.resize(num_steps);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto g = static_cast<std::size_t>(s.class_index.at(data.labels[i]));
        s.task_indices[g / per].push_back(i);
    }
    return s;
}

// ---------------------------------------------------------------------------

LabeledDataset load_cifar100_binary(const std::filesystem::path& path) {
    constexpr std::size_t kRecord = 3074;
    constexpr std::size_t kPixels = 3072;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open CIFAR-100 file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % kRecord != 0) {
        throw std::runtime_error("CIFAR-100 file " + path.string() + " has " + std::to_string(bytes.size()) +
                                 " bytes, not a multiple of 3074");
    }
    LabeledDataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    for (int c = 0; c < 100; ++c) d.class_names.push_back(std::to_string(c));
    const std::size_t n = bytes.size() / kRecord;
    d.labels.resize(n);
    d.pixels.resize(n * kPixels);
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* rec = bytes.data() + r * kRecord;
        const unsigned fine = rec[1];
        if (fine > 99) {
            throw std::runtime_error("CIFAR-100 record " + std::to_string(r) + " has fine label " + std::to_string(fine));
        }
        d.labels[r] = static_cast<int>(fine);
        for (std::size_t p = 0; p < kPixels; ++p) d.pixels[r * kPixels + p] = static_cast<float>(rec[2 + p]) / 255.0f;
    }
    return d;
}

// ---------------------------------------------------------------------------

void SyntheticBlobConfig::validate() const {
    if (num_classes == 0 || image_size == 0 || channels == 0) throw std::invalid_argument("synthetic: sizes must be positive");
    if (pattern_cells == 0 || image_size % pattern_cells != 0) {
        throw std::invalid_argument("synthetic: image_size must be divisible by pattern_cells");
    }
    if (noise_std < 0) throw std::invalid_argument("synthetic: noise_std must be non-negative");
    if (contrast < 0 || contrast > 1) throw std::invalid_argument("synthetic: contrast must lie in [0, 1]");
}

LabeledDataset gen_synthetic(const SyntheticBlobConfig& c, Split split) {
    c.validate();
    const std::size_t s = c.image_size;
    const std::size_t cell = s / c.pattern_cells;
    const std::size_t f = c.channels * s * s;

    std::mt19937_64 pattern_rng(c.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<float>> patterns(c.num_classes, std::vector<float>(f));
    for (auto& pat : patterns) {
        std::vector<double> cells(c.channels * c.pattern_cells * c.pattern_cells);
        for (auto& v : cells) v = 0.5 + c.contrast * (unit(pattern_rng) - 0.5);
        for (std::size_t ch = 0; ch < c.channels; ++ch)
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x)
                    pat[(ch * s + y) * s + x] =
                        static_cast<float>(cells[(ch * c.pattern_cells + y / cell) * c.pattern_cells + x / cell]);
    }

    const std::size_t per_class = split == Split::train ? c.samples_per_class : c.test_samples_per_class;
    std::seed_seq noise_seed{c.seed, static_cast<std::uint64_t>(split == Split::train ? 1 : 2)};
    std::mt19937_64 noise_rng(noise_seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    LabeledDataset d;
    d.channels = c.channels;
    d.height = s;
    d.width = s;
    for (std::size_t k = 0; k < c.num_classes; ++k) d.class_names.push_back("blob_" + std::to_string(k));
    d.pixels.reserve(c.num_classes * per_class * f);
    // Interleave classes so any prefix of the dataset is class-balanced.
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t k = 0; k < c.num_classes; ++k) {
            d.labels.push_back(static_cast<int>(k));
            for (std::size_t p = 0; p < f; ++p) {
                const double v = patterns[k][p] + c.noise_std * noise(noise_rng);
                d.pixels.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
            }
        }
    }
    return d;
}

}  // namespace dytox
