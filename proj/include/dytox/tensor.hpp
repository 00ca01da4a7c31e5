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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dytox {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Raised when a forward value leaves the finite range.
class NonFiniteError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array. product(shape) == data.size() always holds.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (numel(shape) != data.size()) {
            throw std::invalid_argument("tensor shape " + to_string(shape) + " does not match " +
                                        std::to_string(data.size()) + " values");
        }
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool empty() const { return data.empty(); }

    // Matrix view: rank-1 tensors are a single row, higher ranks fold trailing extents into columns.
    std::size_t rows() const { return shape.size() < 2 ? 1 : shape.front(); }
    std::size_t cols() const {
        if (shape.empty()) return 1;
        return shape.size() < 2 ? shape[0] : (shape[0] == 0 ? 0 : size() / shape[0]);
    }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }
};

}  // namespace dytox
