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
#include "dytox/losses.hpp"
#include "dytox/optim.hpp"
#include "support.hpp"

using namespace dytox;
using dytox::testing::random_param;
using dytox::testing::random_tensor;
using dytox::testing::sigmoid_ref;

TEST_CASE("alpha schedule") {
    const std::vector<std::size_t> ten{10, 10, 10, 10};
    CHECK(alpha_schedule(ten, 1) == 0.0);
    CHECK(alpha_schedule(ten, 2) == 0.5);
    const std::vector<std::size_t> mixed{2, 3, 5};
    CHECK(alpha_schedule(mixed, 3) == 0.5);
    CHECK(alpha_schedule(mixed, 2) == 0.4);
    double prev = -1;
    for (std::size_t t = 1; t <= 4; ++t) {
        const double a = alpha_schedule(ten, t);
        CHECK(a >= prev);
        CHECK(a >= 0.0);
        CHECK(a < 1.0);
        prev = a;
    }
    CHECK_THROWS_AS(alpha_schedule(ten, 0), std::invalid_argument);
    CHECK_THROWS_AS(alpha_schedule(ten, 5), std::invalid_argument);
}

TEST_CASE("classification loss") {
    Tape<double> tape(false);
    const std::vector<std::size_t> labels{0, 3, 1};
    auto half = tape.constant(Tensor<double>(Shape{3, 4}, 0.5));
    CHECK(std::abs(bce_classification_loss(half, labels).item() - std::log(2.0)) <= 1e-12);

    const auto y = one_hot<double>(labels, 4);
    CHECK(bce_classification_loss(tape.constant(y), y).item() <= 1e-6);
    CHECK_THROWS_AS(bce_classification_loss(half, std::vector<std::size_t>{4}), std::invalid_argument);

    const Tensor<double> p(Shape{1, 3}, {0.2, 0.7, 0.9});
    const Tensor<double> soft(Shape{1, 3}, {0.25, 0.75, 0.0});
    double ref = 0;
    for (int c = 0; c < 3; ++c) ref -= soft[c] * std::log(p[c]) + (1 - soft[c]) * std::log(1 - p[c]);
    CHECK(std::abs(bce_classification_loss(tape.constant(p), soft).item() - ref / 3) <= 1e-14);
}

TEST_CASE("distillation loss") {
    Tape<double> tape(false);
    CHECK(std::abs(kd_loss(sigmoid(tape.constant(Tensor<double>(Shape{2, 3}))), Tensor<double>(Shape{2, 3}, 0.5)).item() -
                   std::log(2.0)) <= 1e-12);

    std::mt19937_64 rng(1);
    const auto s_logits = random_tensor<double>(Shape{2, 4}, rng, -2, 2);
    const auto teacher = random_tensor<double>(Shape{2, 4}, rng, 0.05, 0.95);
    double ref = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        const double q = sigmoid_ref(s_logits[i]);
        ref -= teacher[i] * std::log(q) + (1 - teacher[i]) * std::log(1 - q);
    }
    CHECK(std::abs(kd_loss(sigmoid(tape.constant(s_logits)), teacher).item() - ref / 8) <= 1e-12);
    CHECK_THROWS_AS(kd_loss(sigmoid(tape.constant(s_logits)), Tensor<double>(Shape{2, 3}, 0.5)), std::invalid_argument);

    SUBCASE("gradient vanishes when student matches teacher") {
        auto logits = random_param<double>("s", Shape{3, 4}, rng, -2, 2);
        Tensor<double> t(logits.value.shape);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = sigmoid_ref(logits.value[i]);
        logits.zero_grad();
        Tape<double> g(true);
        g.backward(kd_loss(sigmoid(g.param(logits)), t));
        for (double v : logits.grad.data) CHECK(std::abs(v) <= 1e-6);
    }

    SUBCASE("softmax alternative") {
        const auto t_logits = random_tensor<double>(Shape{2, 4}, rng, -2, 2);
        const double temp = 2.0;
        double r = 0;
        for (std::size_t b = 0; b < 2; ++b) {
            double zs = 0, zt = 0;
            for (std::size_t c = 0; c < 4; ++c) {
                zs += std::exp(s_logits.at(b, c) / temp);
                zt += std::exp(t_logits.at(b, c) / temp);
            }
            for (std::size_t c = 0; c < 4; ++c)
                r -= std::exp(t_logits.at(b, c) / temp) / zt * (s_logits.at(b, c) / temp - std::log(zs));
        }
        CHECK(std::abs(kd_loss_softmax(tape.constant(s_logits), t_logits, temp).item() - temp * temp * r / 2) <= 1e-12);
    }
}

TEST_CASE("divergence loss") {
    Tape<double> tape(false);
    const auto labels = divergence_labels(std::vector<std::size_t>{0, 1, 4, 5, 3}, 4, 2);
    CHECK(labels == std::vector<std::size_t>{2, 2, 0, 1, 2});

    const auto targets = one_hot<double>(std::vector<std::size_t>{0, 2}, 3);
    CHECK(std::abs(divergence_loss(tape.constant(Tensor<double>(Shape{2, 3})), targets, 2).item() - std::log(3.0)) <= 1e-12);
    CHECK_THROWS_AS(divergence_loss(tape.constant(Tensor<double>(Shape{2, 3})), targets, 1), std::invalid_argument);

    std::mt19937_64 rng(2);
    const auto logits = random_tensor<double>(Shape{5, 3}, rng, -3, 3);
    const auto y = one_hot<double>(labels, 3);
    double ref = 0;
    for (std::size_t b = 0; b < 5; ++b) {
        double z = 0;
        for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits.at(b, c));
        ref -= logits.at(b, labels[b]) - std::log(z);
    }
    CHECK(std::abs(divergence_loss(tape.constant(logits), y, 3).item() - ref / 5) <= 1e-12);
}

TEST_CASE("total loss") {
    Tape<double> tape(false);
    auto clf = tape.constant(Tensor<double>(Shape{1}, 1.0));
    auto kd = tape.constant(Tensor<double>(Shape{1}, 2.0));
    auto div = tape.constant(Tensor<double>(Shape{1}, 3.0));
    CHECK(total_loss<double>({clf, kd, div}, 0.5, 0.1).item() == doctest::Approx(1.8).epsilon(1e-15));

    Tape<float> tf(false);
    const std::vector<std::size_t> counts{2};
    std::mt19937_64 rng(3);
    auto probs = sigmoid(tf.constant(random_tensor<float>(Shape{4, 2}, rng)));
    auto c = bce_classification_loss(probs, std::vector<std::size_t>{0, 1, 1, 0});
    const float total = total_loss<float>({c, std::nullopt, std::nullopt}, alpha_schedule(counts, 1), 0.1).item();
    CHECK(total == c.item());

    SUBCASE("gradient is the weighted sum of component gradients") {
        auto w = random_param<double>("w", Shape{3, 4}, rng);
        const auto y = one_hot<double>(std::vector<std::size_t>{0, 3, 2}, 4);
        const auto teach = random_tensor<double>(Shape{3, 2}, rng, 0.1, 0.9);
        const auto dy = one_hot<double>(std::vector<std::size_t>{1, 2, 0}, 3);
        auto grad_of = [&](double a_clf, double a_kd, double a_div) {
            w.zero_grad();
            Tape<double> g(true);
            auto x = g.param(w);
            auto p = sigmoid(x);
            LossTerms<double> terms{bce_classification_loss(p, y), kd_loss(slice_cols(p, 0, 2), teach),
                                    divergence_loss(slice_cols(x, 1, 4), dy, 2)};
            Var<double> loss = a_clf < 0 ? total_loss(terms, 0.3, 0.1)
                                         : add(add(scale(terms.clf, a_clf), scale(*terms.kd, a_kd)), scale(*terms.div, a_div));
            g.backward(loss);
            return w.grad;
        };
        const auto whole = grad_of(-1, 0, 0);
        const auto parts = grad_of(0.7, 0.3, 0.1);
        for (std::size_t i = 0; i < whole.size(); ++i) CHECK(std::abs(whole[i] - parts[i]) <= 1e-15);
        CHECK(grad_check(
                  [&](Tape<double>& g) {
                      auto x = g.param(w);
                      auto p = sigmoid(x);
                      return total_loss<double>({bce_classification_loss(p, y), kd_loss(slice_cols(p, 0, 2), teach),
                                                 divergence_loss(slice_cols(x, 1, 4), dy, 2)},
                                                0.3, 0.1);
                  },
                  w) <= 1e-6);
    }
}

TEST_CASE("mixup") {
    Rng rng(4);
    const MixPlan identity{{1, 0}, {1.0, 1.0}};
    const Tensor<double> x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(apply_mix(x, identity).data == x.data);

    std::mt19937_64 r(5);
    const auto images = random_tensor<float>(Shape{16, 12}, r, 0, 1);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 16; ++i) labels.push_back(i % 5);
    const auto targets = one_hot<float>(labels, 5);
    const auto mixed = mixup(images, targets, rng);
    for (std::size_t i = 0; i < 16; ++i) {
        const auto row = mixed.targets.row(i);
        CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0f) - 1.0f) <= 1e-6f);
        const std::size_t j = mixed.plan.partner[i];
        for (std::size_t k = 0; k < 12; ++k) {
            const float lo = std::min(images.at(i, k), images.at(j, k));
            const float hi = std::max(images.at(i, k), images.at(j, k));
            CHECK(mixed.images.at(i, k) >= lo - 1e-6f);
            CHECK(mixed.images.at(i, k) <= hi + 1e-6f);
        }
    }
    auto partners = mixed.plan.partner;
    std::sort(partners.begin(), partners.end());
    for (std::size_t i = 0; i < 16; ++i) CHECK(partners[i] == i);

    double mean = 0;
    int outside = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const double l = sample_beta(0.8, 0.8, rng);
        outside += l < 0.0 || l > 1.0;
        mean += l / draws;
    }
    CHECK(outside == 0);
    CHECK(std::abs(mean - 0.5) <= 0.01);

    CHECK_THROWS_AS(mixup(Tensor<float>(Shape{1, 12}), Tensor<float>(Shape{1, 5}), rng), std::invalid_argument);
}
