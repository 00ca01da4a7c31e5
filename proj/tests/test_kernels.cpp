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

#include <random>
#include <vector>

#include "doctest.h"
#include "dytox/kernels.hpp"
#include "support.hpp"

namespace k = dytox::kernels;

namespace {

template <typename T>
std::vector<T> rand_vec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(d(rng));
    return v;
}

}  // namespace

TEST_CASE_TEMPLATE("gemm variants: omp matches serial bit for bit", T, float, double) {
    std::mt19937_64 rng(1);
    // Second shape is large enough to take the parallel branch.
    for (auto [m, kk, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 5, 7}, {96, 128, 160}}) {
        const auto a = rand_vec<T>(m * kk, rng);
        const auto b = rand_vec<T>(kk * n, rng);
        const auto bt = rand_vec<T>(n * kk, rng);
        const auto at = rand_vec<T>(kk * m, rng);
        for (bool acc : {false, true}) {
            auto c0 = rand_vec<T>(m * n, rng);
            auto c1 = c0;
            k::serial::gemm_nn<T>(a, b, c0, m, kk, n, acc);
            k::omp::gemm_nn<T>(a, b, c1, m, kk, n, acc);
            CHECK(c0 == c1);
            k::serial::gemm_nt<T>(a, bt, c0, m, kk, n, acc);
            k::omp::gemm_nt<T>(a, bt, c1, m, kk, n, acc);
            CHECK(c0 == c1);
            k::serial::gemm_tn<T>(at, b, c0, m, kk, n, acc);
            k::omp::gemm_tn<T>(at, b, c1, m, kk, n, acc);
            CHECK(c0 == c1);
        }
    }
}

TEST_CASE("gemm_nn agrees with the triple-loop oracle") {
    std::mt19937_64 rng(2);
    const std::size_t m = 7, kk = 9, n = 5;
    const auto a = rand_vec<double>(m * kk, rng);
    const auto b = rand_vec<double>(kk * n, rng);
    std::vector<double> c(m * n);
    k::serial::gemm_nn<double>(a, b, c, m, kk, n, false);
    const auto ref = dytox::testing::naive_matmul(a, b, m, kk, n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-14));

    // a * b^T and a^T * b through the transposed variants.
    std::vector<double> bt(n * kk), at(kk * m);
    for (std::size_t p = 0; p < kk; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * kk + p] = b[p * n + j];
        for (std::size_t i = 0; i < m; ++i) at[p * m + i] = a[i * kk + p];
    }
    std::vector<double> c2(m * n), c3(m * n);
    k::serial::gemm_nt<double>(a, bt, c2, m, kk, n, false);
    k::serial::gemm_tn<double>(at, b, c3, m, kk, n, false);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-14));
        CHECK(c3[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    }
}

TEST_CASE_TEMPLATE("attention kernels: omp matches serial bit for bit", T, float, double) {
    std::mt19937_64 rng(3);
    for (const k::AttentionDims dims : {k::AttentionDims{2, 2, 3, 5, 8}, k::AttentionDims{6, 4, 1, 65, 32},
                                        k::AttentionDims{4, 4, 64, 64, 32}}) {
        const std::size_t qn = dims.batch * dims.queries * dims.dim;
        const std::size_t kn = dims.batch * dims.keys * dims.dim;
        const auto q = rand_vec<T>(qn, rng), kv = rand_vec<T>(kn, rng), v = rand_vec<T>(kn, rng);
        std::vector<T> o0(qn), o1(qn), p0(dims.prob_count()), p1(dims.prob_count());
        k::serial::attention_forward<T>(q, kv, v, o0, p0, dims);
        k::omp::attention_forward<T>(q, kv, v, o1, p1, dims);
        CHECK(o0 == o1);
        CHECK(p0 == p1);

        const auto dout = rand_vec<T>(qn, rng);
        std::vector<T> dq0(qn), dk0(kn), dv0(kn), dq1(qn), dk1(kn), dv1(kn);
        k::serial::attention_backward<T>(q, kv, v, p0, dout, dq0, dk0, dv0, dims);
        k::omp::attention_backward<T>(q, kv, v, p0, dout, dq1, dk1, dv1, dims);
        CHECK(dq0 == dq1);
        CHECK(dk0 == dk1);
        CHECK(dv0 == dv1);
    }
}

TEST_CASE_TEMPLATE("layer norm kernels: omp matches serial bit for bit", T, float, double) {
    std::mt19937_64 rng(4);
    for (auto [rows, dim] : {std::pair<std::size_t, std::size_t>{3, 4}, {1024, 48}}) {
        const auto x = rand_vec<T>(rows * dim, rng), g = rand_vec<T>(dim, rng), b = rand_vec<T>(dim, rng);
        std::vector<T> y0(rows * dim), y1(rows * dim), m0(rows), m1(rows), r0(rows), r1(rows);
        k::serial::layer_norm_forward<T>(x, g, b, y0, m0, r0, rows, dim, T(1e-6));
        k::omp::layer_norm_forward<T>(x, g, b, y1, m1, r1, rows, dim, T(1e-6));
        CHECK(y0 == y1);
        CHECK(m0 == m1);
        CHECK(r0 == r1);

        const auto dy = rand_vec<T>(rows * dim, rng);
        std::vector<T> dx0(rows * dim), dx1(rows * dim), dg0(dim), dg1(dim), db0(dim), db1(dim);
        k::serial::layer_norm_backward<T>(x, g, m0, r0, dy, dx0, dg0, db0, rows, dim);
        k::omp::layer_norm_backward<T>(x, g, m0, r0, dy, dx1, dg1, db1, rows, dim);
        CHECK(dx0 == dx1);
        CHECK(dg0 == dg1);
        CHECK(db0 == db1);
    }
}

TEST_CASE("max_threads is positive") { CHECK(k::max_threads() >= 1); }
