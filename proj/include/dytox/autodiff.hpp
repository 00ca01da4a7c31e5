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

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape records every op of one forward pass in execution order, which is a
// topological order by construction. Parameters enter the tape as leaves that
// reference the parameter's storage; backward() accumulates into
// Parameter::grad for every parameter that requires a gradient.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dytox/tensor.hpp"

namespace dytox {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;  // empty until first backward or zero_grad()
    bool requires_grad = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {}

    void zero_grad() {
        if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
        else grad.fill(T(0));
    }
    std::size_t size() const { return value.size(); }
};

template <typename T>
class Tape;

/// Handle to a tape node.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    T item() const;
};

template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> constant(Tensor<T> value);
    // The parameter must outlive the tape. Grads are written to it only when
    // the tape records gradients and the parameter requires one.
    Var<T> param(const Parameter<T>& p);

    // Records an op result. `backward` runs only if some input requires grad.
    Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
    Var<T> push(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

    void backward(Var<T> loss);

    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    // Lazily allocated gradient buffer of node `id`.
    Tensor<T>& grad(std::size_t id);
    std::span<T> grad_span(std::size_t id) { return grad(id).span(); }

    std::size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Parameter<T>* param = nullptr;
        Tensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var<T> record(Node node);

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

template <typename T>
T Var<T>::item() const {
    const auto& v = value();
    if (v.size() != 1) throw std::invalid_argument("item() on non-scalar " + to_string(v.shape));
    return v[0];
}

// ---------------------------------------------------------------------------
// Ops. Matrices are rank-2 [rows x cols]; see each op for extra conventions.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x[rows x in] * W^T + b, with W stored [out x in].
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
/// x + p where p's rows repeat down x (x.rows is a multiple of p.rows).
template <typename T> Var<T> add_tiled(Var<T> x, Var<T> p);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> x);
/// Exact-erf GELU: x * Phi(x).
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);
/// Normalizes each row over the last extent D, then applies gain/bias of length D.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end);
/// [groups*n x D] -> [groups*(n+1) x D] with `row` [1 x D] placed first in each group.
template <typename T> Var<T> prepend_row(Var<T> row, Var<T> x, std::size_t groups);
/// Rows offset, offset+stride, ... of x.
template <typename T> Var<T> strided_rows(Var<T> x, std::size_t stride, std::size_t offset);
/// [1 x D] -> [n x D].
template <typename T> Var<T> repeat_rows(Var<T> row, std::size_t n);
/// Multi-head scaled dot-product attention. q is [batch*queries x D], k and v
/// are [batch*keys x D]; returns [batch*queries x D]. The softmax maps
/// ([batch, heads, queries, keys]) are copied to `maps` when given.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t heads,
                 Tensor<T>* maps = nullptr);
/// Mean binary cross-entropy of probabilities against (soft) targets of the
/// same shape. Probabilities are clamped to [clamp, 1 - clamp].
template <typename T> Var<T> binary_cross_entropy(Var<T> probs, const Tensor<T>& targets, T clamp = T(1e-7));
/// Mean over rows of -sum_c target_c * log softmax(logits)_c.
template <typename T> Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets);

}  // namespace dytox
