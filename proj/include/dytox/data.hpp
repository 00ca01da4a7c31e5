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
#include <span>
#include <string>
#include <vector>

#include "dytox/tensor.hpp"

namespace dytox {

/// Images are channel-major [C x H x W] floats in [0, 1], stored back to back.
struct LabeledDataset {
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<float> pixels;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const { return channels * height * width; }
    std::size_t num_classes() const { return class_names.size(); }
    std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }

    void validate() const;
};

/// Stacks the selected images into [n x C*H*W].
template <typename T>
Tensor<T> gather_images(const LabeledDataset& data, std::span<const std::size_t> indices);

/// Ordered partition of a dataset's classes into equally sized tasks.
/// "Global" class indices number classes in learning order.
struct ClassIncrementalScenario {
    std::vector<int> class_order;                    // global index -> dataset label
    std::vector<std::vector<int>> task_classes;      // dataset labels per task
    std::vector<std::vector<std::size_t>> task_indices;  // dataset indices per task
    std::vector<int> class_index;                    // dataset label -> global index, -1 if unused
    std::uint64_t seed = 0;

    std::size_t num_tasks() const { return task_classes.size(); }
    std::vector<std::size_t> class_counts() const;
    std::size_t task_offset(std::size_t task) const;  // first global index of a 0-based task
    std::size_t global_class(int label) const;
    std::size_t task_of_global(std::size_t global) const;
    /// Indices of `data` whose label belongs to the 0-based task (any split).
    std::vector<std::size_t> indices_for(const LabeledDataset& data, std::size_t task) const;
};

ClassIncrementalScenario build_scenario(const LabeledDataset& data, std::size_t num_steps, std::uint64_t class_order_seed);

/// CIFAR-100 binary records: coarse byte, fine byte, 3072 channel-major
/// pixel bytes. Fine labels are kept; pixels scale to [0, 1].
LabeledDataset load_cifar100_binary(const std::filesystem::path& path);

struct SyntheticBlobConfig {
    std::size_t num_classes = 10;
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t pattern_cells = 4;  // class pattern resolution per side
    double contrast = 1.0;          // pattern amplitude around 0.5
    double noise_std = 0.1;
    std::size_t samples_per_class = 100;
    std::size_t test_samples_per_class = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class Split { train, test };

/// Per class a fixed random block pattern plus Gaussian pixel noise, clamped
/// to [0, 1]. Patterns depend only on the seed; each split draws its own noise.
LabeledDataset gen_synthetic(const SyntheticBlobConfig& config, Split split = Split::train);

}  // namespace dytox
