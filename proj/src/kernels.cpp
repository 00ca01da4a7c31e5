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

#include "dytox/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dytox::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

template <typename T>
void attention_forward_one(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                           std::span<T> out, std::span<T> probs, const AttentionDims& d,
                           std::size_t b, std::size_t h) {
    const std::size_t hd = d.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const std::size_t col = h * hd;
    T* p = probs.data() + ((b * d.heads + h) * d.queries) * d.keys;
    for (std::size_t i = 0; i < d.queries; ++i) {
        const T* qi = q.data() + (b * d.queries + i) * d.dim + col;
        T* pi = p + i * d.keys;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < d.keys; ++j) {
            const T* kj = k.data() + (b * d.keys + j) * d.dim + col;
            T s = 0;
            for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
            s *= scale;
            pi[j] = s;
            mx = std::max(mx, s);
        }
        T sum = 0;
        for (std::size_t j = 0; j < d.keys; ++j) {
            pi[j] = std::exp(pi[j] - mx);
            sum += pi[j];
        }
        for (std::size_t j = 0; j < d.keys; ++j) pi[j] /= sum;
        T* oi = out.data() + (b * d.queries + i) * d.dim + col;
        for (std::size_t c = 0; c < hd; ++c) oi[c] = 0;
        for (std::size_t j = 0; j < d.keys; ++j) {
            const T* vj = v.data() + (b * d.keys + j) * d.dim + col;
            for (std::size_t c = 0; c < hd; ++c) oi[c] += pi[j] * vj[c];
        }
    }
}

template <typename T>
void attention_backward_one(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                            std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                            std::span<T> dk, std::span<T> dv, const AttentionDims& d, std::size_t b,
                            std::size_t h, std::vector<T>& ds) {
    const std::size_t hd = d.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const std::size_t col = h * hd;
    const T* p = probs.data() + ((b * d.heads + h) * d.queries) * d.keys;
    ds.assign(d.keys, T(0));
    for (std::size_t i = 0; i < d.queries; ++i) {
        const T* pi = p + i * d.keys;
        const T* doi = dout.data() + (b * d.queries + i) * d.dim + col;
        const T* qi = q.data() + (b * d.queries + i) * d.dim + col;
        T dot = 0;
        for (std::size_t j = 0; j < d.keys; ++j) {
            const T* vj = v.data() + (b * d.keys + j) * d.dim + col;
            T dp = 0;
            for (std::size_t c = 0; c < hd; ++c) dp += doi[c] * vj[c];
            ds[j] = dp;
            dot += pi[j] * dp;
        }
        T* dqi = dq.data() + (b * d.queries + i) * d.dim + col;
        for (std::size_t j = 0; j < d.keys; ++j) {
            const T s = pi[j] * (ds[j] - dot) * scale;
            const T* kj = k.data() + (b * d.keys + j) * d.dim + col;
            T* dkj = dk.data() + (b * d.keys + j) * d.dim + col;
            T* dvj = dv.data() + (b * d.keys + j) * d.dim + col;
            for (std::size_t c = 0; c < hd; ++c) {
                dqi[c] += s * kj[c];
                dkj[c] += s * qi[c];
                dvj[c] += pi[j] * doi[c];
            }
        }
    }
}

template <typename T>
void layer_norm_row(const T* x, std::span<const T> gain, std::span<const T> bias, T* y, T& mean,
                    T& rstd, std::size_t dim, T eps) {
    T m = 0;
    for (std::size_t c = 0; c < dim; ++c) m += x[c];
    m /= static_cast<T>(dim);
    T var = 0;
    for (std::size_t c = 0; c < dim; ++c) var += (x[c] - m) * (x[c] - m);
    var /= static_cast<T>(dim);
    const T r = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < dim; ++c) y[c] = (x[c] - m) * r * gain[c] + bias[c];
    mean = m;
    rstd = r;
}

template <typename T>
void layer_norm_dx_row(const T* x, std::span<const T> gain, T mean, T rstd, const T* dy, T* dx,
                       std::size_t dim) {
    T mean_g = 0;
    T mean_gx = 0;
    for (std::size_t c = 0; c < dim; ++c) {
        const T xhat = (x[c] - mean) * rstd;
        const T g = dy[c] * gain[c];
        mean_g += g;
        mean_gx += g * xhat;
    }
    mean_g /= static_cast<T>(dim);
    mean_gx /= static_cast<T>(dim);
    for (std::size_t c = 0; c < dim; ++c) {
        const T xhat = (x[c] - mean) * rstd;
        dx[c] += rstd * (dy[c] * gain[c] - mean_g - xhat * mean_gx);
    }
}

template <typename T>
void layer_norm_param_col(std::span<const T> x, std::span<const T> mean, std::span<const T> rstd,
                          std::span<const T> dy, std::span<T> dgain, std::span<T> dbias,
                          std::size_t rows, std::size_t dim, std::size_t c) {
    T g = 0;
    T b = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T xhat = (x[r * dim + c] - mean[r]) * rstd[r];
        g += dy[r * dim + c] * xhat;
        b += dy[r * dim + c];
    }
    dgain[c] += g;
    dbias[c] += b;
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

// ---------------------------------------------------------------------------
// Serial reference: plain loops, one dot product per output element.

namespace serial {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> out, std::span<T> probs, const AttentionDims& dims) {
    for (std::size_t b = 0; b < dims.batch; ++b)
        for (std::size_t h = 0; h < dims.heads; ++h)
            attention_forward_one(q, k, v, out, probs, dims, b, h);
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& dims) {
    std::vector<T> ds;
    for (std::size_t b = 0; b < dims.batch; ++b)
        for (std::size_t h = 0; h < dims.heads; ++h)
            attention_backward_one(q, k, v, probs, dout, dq, dk, dv, dims, b, h, ds);
}

template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                        std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                        std::size_t dim, T eps) {
    for (std::size_t r = 0; r < rows; ++r)
        layer_norm_row(x.data() + r * dim, gain, bias, y.data() + r * dim, mean[r], rstd[r], dim, eps);
}

template <typename T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dgain, std::span<T> dbias, std::size_t rows, std::size_t dim) {
    for (std::size_t r = 0; r < rows; ++r)
        layer_norm_dx_row(x.data() + r * dim, gain, mean[r], rstd[r], dy.data() + r * dim,
                          dx.data() + r * dim, dim);
    for (std::size_t c = 0; c < dim; ++c) layer_norm_param_col(x, mean, rstd, dy, dgain, dbias, rows, dim, c);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP: rows (or sample/head pairs) are distributed across threads; the
// per-element accumulation order matches the serial loops above.

namespace omp {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel if (m * k * n > kParallelWork)
    {
        std::vector<T> acc(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
            std::fill(acc.begin(), acc.end(), T(0));
            const T* ai = a.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = ai[p];
                const T* bp = b.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) acc[j] += av * bp[j];
            }
            T* ci = c.data() + i * n;
            if (accumulate) {
                for (std::size_t j = 0; j < n; ++j) ci[j] += acc[j];
            } else {
                std::copy(acc.begin(), acc.end(), ci);
            }
        }
    }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        const T* ai = a.data() + i * k;
        T* ci = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b.data() + j * k;
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel if (m * k * n > kParallelWork)
    {
        std::vector<T> acc(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
            std::fill(acc.begin(), acc.end(), T(0));
            for (std::size_t p = 0; p < k; ++p) {
                const T av = a[p * m + i];
                const T* bp = b.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) acc[j] += av * bp[j];
            }
            T* ci = c.data() + i * n;
            if (accumulate) {
                for (std::size_t j = 0; j < n; ++j) ci[j] += acc[j];
            } else {
                std::copy(acc.begin(), acc.end(), ci);
            }
        }
    }
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> out, std::span<T> probs, const AttentionDims& dims) {
    const auto pairs = static_cast<std::ptrdiff_t>(dims.batch * dims.heads);
    const std::size_t work = dims.prob_count() * dims.head_dim();
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
        const auto b = static_cast<std::size_t>(bh) / dims.heads;
        const auto h = static_cast<std::size_t>(bh) % dims.heads;
        attention_forward_one(q, k, v, out, probs, dims, b, h);
    }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& dims) {
    const auto pairs = static_cast<std::ptrdiff_t>(dims.batch * dims.heads);
    const std::size_t work = dims.prob_count() * dims.head_dim();
#pragma omp parallel if (work > kParallelWork)
    {
        std::vector<T> ds;
#pragma omp for schedule(static)
        for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
            const auto b = static_cast<std::size_t>(bh) / dims.heads;
            const auto h = static_cast<std::size_t>(bh) % dims.heads;
            attention_backward_one(q, k, v, probs, dout, dq, dk, dv, dims, b, h, ds);
        }
    }
}

template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                        std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                        std::size_t dim, T eps) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * dim > kParallelWork)
    for (std::ptrdiff_t r = 0; r < n; ++r)
        layer_norm_row(x.data() + r * dim, gain, bias, y.data() + r * dim, mean[r], rstd[r], dim, eps);
}

template <typename T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dgain, std::span<T> dbias, std::size_t rows, std::size_t dim) {
    const bool par = rows * dim > kParallelWork;
    const auto n = static_cast<std::ptrdiff_t>(rows);
    const auto cols = static_cast<std::ptrdiff_t>(dim);
#pragma omp parallel if (par)
    {
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t r = 0; r < n; ++r)
            layer_norm_dx_row(x.data() + r * dim, gain, mean[r], rstd[r], dy.data() + r * dim,
                              dx.data() + r * dim, dim);
#pragma omp for schedule(static)
        for (std::ptrdiff_t c = 0; c < cols; ++c)
            layer_norm_param_col(x, mean, rstd, dy, dgain, dbias, rows, dim, static_cast<std::size_t>(c));
    }
}

}  // namespace omp

#define DYTOX_INSTANTIATE(NS, T)                                                                        \
    template void NS::gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,     \
                                 std::size_t, std::size_t, bool);                                       \
    template void NS::gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,     \
                                 std::size_t, std::size_t, bool);                                       \
    template void NS::gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,     \
                                 std::size_t, std::size_t, bool);                                       \
    template void NS::attention_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>,  \
                                           std::span<T>, std::span<T>, const AttentionDims&);           \
    template void NS::attention_backward<T>(std::span<const T>, std::span<const T>,                     \
                                            std::span<const T>, std::span<const T>,                     \
                                            std::span<const T>, std::span<T>, std::span<T>,             \
                                            std::span<T>, const AttentionDims&);                        \
    template void NS::layer_norm_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                            std::span<T>, std::span<T>, std::span<T>, std::size_t,      \
                                            std::size_t, T);                                            \
    template void NS::layer_norm_backward<T>(std::span<const T>, std::span<const T>,                    \
                                             std::span<const T>, std::span<const T>,                    \
                                             std::span<const T>, std::span<T>, std::span<T>,            \
                                             std::span<T>, std::size_t, std::size_t);

DYTOX_INSTANTIATE(serial, float)
DYTOX_INSTANTIATE(serial, double)
DYTOX_INSTANTIATE(omp, float)
DYTOX_INSTANTIATE(omp, double)

#undef DYTOX_INSTANTIATE

}  // namespace dytox::kernels
