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
#include <numeric>

#include "doctest.h"
#include "dytox/autodiff.hpp"
#include "dytox/optim.hpp"
#include "support.hpp"

using namespace dytox;
using dytox::testing::random_param;
using dytox::testing::random_tensor;

TEST_CASE("tensor shape invariants") {
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
    Tensor<double> t(Shape{2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 12);
    Tensor<double> v(Shape{5});
    CHECK(v.rows() == 1);
    CHECK(v.cols() == 5);
}

TEST_CASE("matmul") {
    Tape<double> tape(false);
    auto eye = tape.constant(Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}));
    auto m = tape.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
    CHECK(matmul(eye, m).value().data == std::vector<double>{1, 2, 3, 4});

    auto a = tape.constant(Tensor<double>(Shape{1, 2}, {1, 2}));
    auto b = tape.constant(Tensor<double>(Shape{2, 1}, {3, 4}));
    CHECK(matmul(a, b).item() == 11.0);

    std::mt19937_64 rng(5);
    const auto x = random_tensor<double>(Shape{3, 4}, rng);
    const auto y = random_tensor<double>(Shape{4, 2}, rng);
    const auto got = matmul(tape.constant(x), tape.constant(y)).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double ref = 0;
            for (std::size_t p = 0; p < 4; ++p) ref += x.at(i, p) * y.at(p, j);
            CHECK(got.at(i, j) == ref);
        }

    CHECK_THROWS_AS(matmul(tape.constant(x), tape.constant(x)), std::invalid_argument);
}

TEST_CASE("softmax") {
    Tape<double> tape(false);
    auto s = softmax(tape.constant(Tensor<double>(Shape{1, 2}, {0, 0})), 1).value();
    CHECK(s.data == std::vector<double>{0.5, 0.5});
    s = softmax(tape.constant(Tensor<double>(Shape{1, 2}, {1000, 1000})), 1).value();
    CHECK(s.data == std::vector<double>{0.5, 0.5});

    s = softmax(tape.constant(Tensor<double>(Shape{1, 3}, {1, 2, 3})), 1).value();
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - std::exp(i + 1.0) / z) <= 1e-12 * std::exp(i + 1.0) / z);

    SUBCASE("slices sum to one along any axis") {
        std::mt19937_64 rng(6);
        Tape<float> tf(false);
        const auto x = random_tensor<float>(Shape{3, 4, 5}, rng, -30, 30);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            const auto y = softmax(tf.constant(x), axis).value();
            const std::size_t extent = x.shape[axis];
            const std::size_t inner = axis == 2 ? 1 : (axis == 1 ? 5 : 20);
            const std::size_t outer = x.size() / (extent * inner);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    float total = 0;
                    for (std::size_t e = 0; e < extent; ++e) {
                        const float v = y[(o * extent + e) * inner + i];
                        CHECK(v >= 0.0f);
                        total += v;
                    }
                    CHECK(std::abs(total - 1.0f) <= 1e-6f);
                }
        }
        const auto xd = random_tensor<double>(Shape{6, 7}, rng, -50, 50);
        const auto yd = softmax(tape.constant(xd), 1).value();
        for (std::size_t r = 0; r < 6; ++r) {
            const auto row = yd.row(r);
            CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-12);
        }
    }
    CHECK_THROWS_AS(softmax(tape.constant(Tensor<double>(Shape{2, 2})), 2), std::invalid_argument);
}

TEST_CASE("layer norm") {
    Tape<double> tape(false);
    auto ones = tape.constant(Tensor<double>(Shape{4}, 1.0));
    auto zeros = tape.constant(Tensor<double>(Shape{4}, 0.0));
    auto y = layer_norm(tape.constant(Tensor<double>(Shape{1, 4}, 5.0)), ones, zeros, 1e-6).value();
    for (double v : y.data) CHECK(v == 0.0);

    auto g2 = tape.constant(Tensor<double>(Shape{2}, 1.0));
    auto b2 = tape.constant(Tensor<double>(Shape{2}, 0.0));
    y = layer_norm(tape.constant(Tensor<double>(Shape{1, 2}, {1, 3})), g2, b2, 1e-15).value();
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));

    std::mt19937_64 rng(7);
    const auto x = random_tensor<double>(Shape{5, 8}, rng, -3, 3);
    const auto gain = random_tensor<double>(Shape{8}, rng);
    const auto bias = random_tensor<double>(Shape{8}, rng);
    y = layer_norm(tape.constant(x), tape.constant(gain), tape.constant(bias), 1e-6).value();
    for (std::size_t r = 0; r < 5; ++r) {
        double mu = 0, var = 0;
        for (std::size_t c = 0; c < 8; ++c) mu += x.at(r, c) / 8;
        for (std::size_t c = 0; c < 8; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu) / 8;
        for (std::size_t c = 0; c < 8; ++c) {
            const double ref = (x.at(r, c) - mu) / std::sqrt(var + 1e-6) * gain[c] + bias[c];
            CHECK(y.at(r, c) == doctest::Approx(ref).epsilon(1e-12));
        }
    }

    SUBCASE("unit statistics for high-variance rows") {
        Tape<float> tf(false);
        const auto xf = random_tensor<float>(Shape{16, 64}, rng, -10, 10);
        const auto yf = layer_norm(tf.constant(xf), tf.constant(Tensor<float>(Shape{64}, 1.0f)),
                                   tf.constant(Tensor<float>(Shape{64}, 0.0f)), 1e-6f)
                            .value();
        for (std::size_t r = 0; r < 16; ++r) {
            double mu = 0, var = 0;
            for (std::size_t c = 0; c < 64; ++c) mu += yf.at(r, c) / 64.0;
            for (std::size_t c = 0; c < 64; ++c) var += (yf.at(r, c) - mu) * (yf.at(r, c) - mu) / 64.0;
            CHECK(std::abs(mu) <= 1e-6);
            CHECK(std::abs(var - 1) <= 1e-4);
        }
    }
    CHECK_THROWS_AS(layer_norm(tape.constant(x), g2, b2, 1e-6), std::invalid_argument);
}

TEST_CASE("sigmoid and gelu") {
    Tape<double> tape(false);
    auto s = sigmoid(tape.constant(Tensor<double>(Shape{1, 4}, {0, 1000, -1000, 1}))).value();
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 1.0);
    CHECK(s[2] >= 0.0);
    CHECK(std::isfinite(s[2]));
    CHECK(s[3] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));

    auto g = gelu(tape.constant(Tensor<double>(Shape{1, 4}, {0, 50, 1, -0.5}))).value();
    CHECK(g[0] == 0.0);
    CHECK(g[1] == doctest::Approx(50.0).epsilon(1e-15));
    CHECK(g[2] == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))).epsilon(1e-15));
    auto g2 = gelu(tape.constant(Tensor<double>(Shape{1, 3}, {-0.1, 0.0, 0.1}))).value();
    CHECK(g2[0] < g2[1]);
    CHECK(g2[1] < g2[2]);
}

TEST_CASE("non-finite forward values are an error") {
    Tape<double> tape(false);
    auto x = tape.constant(Tensor<double>(Shape{1, 1}, 1e308));
    CHECK_THROWS_AS(scale(x, 10.0), NonFiniteError);
}

TEST_CASE("backward") {
    std::mt19937_64 rng(8);
    auto w = random_param<double>("w", Shape{2, 3, 2}, rng);
    {
        Tape<double> tape(true);
        tape.backward(sum(tape.param(w)));
    }
    for (double g : w.grad.data) CHECK(g == 1.0);

    Parameter<double> v("v", Tensor<double>(Shape{2}, {1, 2}));
    {
        Tape<double> tape(true);
        auto p = tape.param(v);
        tape.backward(sum(mul(p, p)));
    }
    CHECK(v.grad.data == std::vector<double>{2, 4});

    Parameter<double> unused("u", Tensor<double>(Shape{3}, 1.0));
    unused.zero_grad();
    {
        Tape<double> tape(true);
        auto p = tape.param(v);
        tape.param(unused);
        tape.backward(sum(p));
    }
    for (double g : unused.grad.data) CHECK(g == 0.0);

    Tape<double> tape(true);
    CHECK_THROWS_AS(tape.backward(tape.param(v)), std::invalid_argument);
}

TEST_CASE("grad_check") {
    std::mt19937_64 rng(9);
    auto theta = random_param<double>("theta", Shape{3, 4}, rng);
    const auto c = random_tensor<double>(Shape{3, 4}, rng);
    CHECK(grad_check([&](Tape<double>& t) { return sum(mul(t.param(theta), t.constant(c))); }, theta) <= 1e-9);

    const auto targets = [] {
        Tensor<double> y(Shape{3, 4});
        y.at(0, 1) = 1;
        y.at(1, 3) = 0.25;
        y.at(1, 0) = 0.75;
        y.at(2, 2) = 1;
        return y;
    }();
    CHECK(grad_check([&](Tape<double>& t) { return softmax_cross_entropy(t.param(theta), targets); }, theta) <= 1e-6);
}

TEST_CASE("every differentiable op passes grad_check at 1e-4") {
    std::mt19937_64 rng(10);
    auto a = random_param<double>("a", Shape{4, 6}, rng);
    auto b = random_param<double>("b", Shape{6, 3}, rng);
    auto w = random_param<double>("w", Shape{5, 6}, rng);
    auto bias = random_param<double>("bias", Shape{5}, rng);
    auto gain = random_param<double>("gain", Shape{6}, rng, 0.5, 1.5);
    auto row = random_param<double>("row", Shape{1, 6}, rng);
    auto q = random_param<double>("q", Shape{2 * 3, 4}, rng);
    auto kk = random_param<double>("k", Shape{2 * 5, 4}, rng);
    auto v = random_param<double>("v", Shape{2 * 5, 4}, rng);
    const auto probe = random_tensor<double>(Shape{4, 6}, rng);
    const auto soft = [] {
        Tensor<double> y(Shape{4, 6}, 0.1);
        return y;
    }();
    Tensor<double> unit_targets(Shape{4, 6});
    for (std::size_t i = 0; i < unit_targets.size(); ++i) unit_targets[i] = (i % 3) / 2.0;

    const double tol = 1e-4;
    auto weighted = [&](Var<double> x) {
        Tensor<double> wts(x.shape());
        std::mt19937_64 r2(11);
        std::uniform_real_distribution<double> d(-1, 1);
        for (auto& e : wts.data) e = d(r2);
        return sum(mul(x, x.tape->constant(wts)));
    };

    CHECK(grad_check([&](Tape<double>& t) { return weighted(matmul(t.param(a), t.param(b))); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(matmul(t.param(a), t.param(b))); }, b) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(linear(t.param(a), t.param(w), std::optional<Var<double>>(t.param(bias)))); }, w) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(linear(t.param(a), t.param(w), std::optional<Var<double>>(t.param(bias)))); }, bias) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(linear(t.param(a), t.param(w), std::optional<Var<double>>(t.param(bias)))); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(add_tiled(t.param(a), t.param(row))); }, row) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(sub(t.param(a), t.constant(probe))); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return mean(mul(t.param(a), t.param(a))); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(sigmoid(t.param(a))); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(gelu(t.param(a))); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(softmax(t.param(a), 0)); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(softmax(t.param(a), 1)); }, a) <= tol);
    CHECK(grad_check(
              [&](Tape<double>& t) {
                  return weighted(layer_norm(t.param(a), t.param(gain), t.constant(Tensor<double>(Shape{6}, 0.1)), 1e-6));
              },
              a) <= tol);
    CHECK(grad_check(
              [&](Tape<double>& t) {
                  return weighted(layer_norm(t.param(a), t.param(gain), t.constant(Tensor<double>(Shape{6}, 0.1)), 1e-6));
              },
              gain) <= tol);
    CHECK(grad_check(
              [&](Tape<double>& t) {
                  auto x = t.param(a);
                  return weighted(concat_cols<double>({slice_cols(x, 4, 6), slice_cols(x, 0, 3)}));
              },
              a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(prepend_row(t.param(row), t.param(a), 2)); }, row) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(prepend_row(t.param(row), t.param(a), 2)); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(strided_rows(t.param(a), 2, 1)); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return weighted(repeat_rows(t.param(row), 3)); }, row) <= tol);
    for (auto* p : {&q, &kk, &v}) {
        CHECK(grad_check([&](Tape<double>& t) { return weighted(attention(t.param(q), t.param(kk), t.param(v), 2, 2)); },
                         *p) <= tol);
    }
    CHECK(grad_check([&](Tape<double>& t) { return binary_cross_entropy(sigmoid(t.param(a)), unit_targets); }, a) <= tol);
    CHECK(grad_check([&](Tape<double>& t) { return softmax_cross_entropy(t.param(a), soft); }, a) <= tol);
}

TEST_CASE("adam") {
    Parameter<double> p("p", Tensor<double>(Shape{3}, {1, -2, 3}));
    AdamState<double> state;
    p.zero_grad();
    adam_step<double>({&p}, state, 0.1);
    CHECK(p.value.data == std::vector<double>{1, -2, 3});

    Parameter<double> s("s", Tensor<double>(Shape{1}, 2.0));
    s.grad = Tensor<double>(Shape{1}, 1.0);
    AdamState<double> st;
    adam_step<double>({&s}, st, 0.1);
    // m_hat = 1, v_hat = 1, step = lr * 1 / (1 + 1e-8).
    CHECK(s.value[0] == doctest::Approx(2.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(st.step == 1);

    Parameter<double> x1("x", Tensor<double>(Shape{2}, {0.5, -0.5}));
    Parameter<double> x2 = x1;
    AdamState<double> s1, s2;
    for (int i = 0; i < 3; ++i) {
        x1.grad = Tensor<double>(Shape{2}, {0.3, -0.7});
        x2.grad = x1.grad;
        adam_step<double>({&x1}, s1, 0.01);
        adam_step<double>({&x2}, s2, 0.01);
    }
    CHECK(x1.value.data == x2.value.data);

    Parameter<double> frozen("f", Tensor<double>(Shape{2}, 1.0));
    frozen.grad = Tensor<double>(Shape{2}, 1.0);
    frozen.requires_grad = false;
    AdamState<double> sf;
    adam_step<double>({&frozen}, sf, 0.1);
    CHECK(frozen.value.data == std::vector<double>{1, 1});

    Parameter<double> bad("x", Tensor<double>(Shape{3}, 1.0));
    bad.grad = Tensor<double>(Shape{3}, 1.0);
    CHECK_THROWS_AS(adam_step<double>({&bad}, s1, 0.01), std::invalid_argument);
}

TEST_CASE("learning-rate schedule") {
    LrSchedule s{1e-3, 5, 30, DecayKind::cosine};
    CHECK(s.at(0) == doctest::Approx(2e-4));
    CHECK(s.at(4) == doctest::Approx(1e-3));
    CHECK(s.at(5) == doctest::Approx(1e-3));
    for (std::size_t e = 0; e < 40; ++e) CHECK(s.at(e) >= 0.0);
    for (std::size_t e = 5; e + 1 < 30; ++e) CHECK(s.at(e + 1) <= s.at(e));
    CHECK(s.at(30) == doctest::Approx(0.0));
}
