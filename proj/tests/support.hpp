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

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dytox/model.hpp"

namespace dytox::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(d(rng));
    return t;
}

template <typename T>
Parameter<T> random_param(const std::string& name, Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    return Parameter<T>(name, random_tensor<T>(std::move(shape), rng, lo, hi));
}

/// D=16, N=16 (16 px, P=4), h=2, one SAB. Larger init so gradients are not tiny.
inline ModelConfig toy_config() {
    ModelConfig c;
    c.image_size = 16;
    c.channels = 3;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.heads = 2;
    c.sab_count = 1;
    c.init_std = 0.3;
    return c;
}

/// Plain row-major matrix product, used as an independent oracle.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("dytox_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace dytox::testing
