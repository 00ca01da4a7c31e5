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

// Dense kernels behind the autodiff ops. Every kernel has a serial reference
// and an OpenMP version. Both accumulate each output element in the same
// order, so their results are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace dytox::kernels {

struct AttentionDims {
    std::size_t batch = 1;
    std::size_t heads = 1;
    std::size_t queries = 1;  // query rows per sample
    std::size_t keys = 1;     // key/value rows per sample
    std::size_t dim = 1;      // model width, split evenly across heads

    std::size_t head_dim() const { return dim / heads; }
    std::size_t prob_count() const { return batch * heads * queries * keys; }
};

#define DYTOX_KERNEL_DECLS                                                                          \
    /* c[m x n] (+)= a[m x k] * b[k x n] */                                                         \
    template <typename T>                                                                           \
    void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,         \
                 std::size_t k, std::size_t n, bool accumulate);                                    \
    /* c[m x n] (+)= a[m x k] * b[n x k]^T */                                                       \
    template <typename T>                                                                           \
    void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,         \
                 std::size_t k, std::size_t n, bool accumulate);                                    \
    /* c[m x n] (+)= a[k x m]^T * b[k x n] */                                                       \
    template <typename T>                                                                           \
    void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,         \
                 std::size_t k, std::size_t n, bool accumulate);                                    \
    /* Scaled dot-product attention per (sample, head). probs receives the softmax maps. */       \
    template <typename T>                                                                           \
    void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,        \
                           std::span<T> out, std::span<T> probs, const AttentionDims& dims);        \
    /* Accumulates into dq, dk, dv. */                                                              \
    template <typename T>                                                                           \
    void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,       \
                            std::span<const T> probs, std::span<const T> dout, std::span<T> dq,     \
                            std::span<T> dk, std::span<T> dv, const AttentionDims& dims);           \
    template <typename T>                                                                           \
    void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, \
                            std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows, \
                            std::size_t dim, T eps);                                                \
    /* Accumulates into dx, dgain, dbias. */                                                        \
    template <typename T>                                                                           \
    void layer_norm_backward(std::span<const T> x, std::span<const T> gain,                         \
                             std::span<const T> mean, std::span<const T> rstd,                      \
                             std::span<const T> dy, std::span<T> dx, std::span<T> dgain,            \
                             std::span<T> dbias, std::size_t rows, std::size_t dim);

namespace serial {
DYTOX_KERNEL_DECLS
}  // namespace serial

namespace omp {
DYTOX_KERNEL_DECLS
}  // namespace omp

#undef DYTOX_KERNEL_DECLS

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace dytox::kernels
