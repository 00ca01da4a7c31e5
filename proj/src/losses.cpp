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

#include "dytox/losses.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dytox {

double alpha_schedule(std::span<const std::size_t> class_counts, std::size_t t) {
    if (t < 1 || t > class_counts.size()) throw std::invalid_argument("alpha_schedule: step out of range");
    const auto old = std::accumulate(class_counts.begin(), class_counts.begin() + static_cast<std::ptrdiff_t>(t - 1),
                                     std::size_t{0});
    const auto seen = old + class_counts[t - 1];
    if (seen == 0) throw std::invalid_argument("alpha_schedule: no classes seen");
    return static_cast<double>(old) / static_cast<double>(seen);
}

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor<T> out(Shape{labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside " + std::to_string(classes) +
                                        " seen classes");
        }
        out.at(i, labels[i]) = T(1);
    }
    return out;
}

template <typename T>
Var<T> bce_classification_loss(Var<T> probs, const Tensor<T>& targets) {
    return binary_cross_entropy(probs, targets, T(1e-7));
}

template <typename T>
Var<T> bce_classification_loss(Var<T> probs, std::span<const std::size_t> labels) {
    return bce_classification_loss(probs, one_hot<T>(labels, probs.cols()));
}

template <typename T>
Var<T> kd_loss(Var<T> student_old_probs, const Tensor<T>& teacher_probs) {
    if (student_old_probs.value().shape != teacher_probs.shape) {
        throw std::invalid_argument("kd_loss: student " + to_string(student_old_probs.shape()) + " vs teacher " +
                                    to_string(teacher_probs.shape));
    }
    return binary_cross_entropy(student_old_probs, teacher_probs, T(1e-7));
}

template <typename T>
Var<T> kd_loss_softmax(Var<T> student_old_logits, const Tensor<T>& teacher_logits, double temperature) {
    if (student_old_logits.value().shape != teacher_logits.shape) throw std::invalid_argument("kd_loss_softmax: width mismatch");
    if (!(temperature > 0)) throw std::invalid_argument("kd_loss_softmax: temperature must be positive");
    const T inv_t = static_cast<T>(1.0 / temperature);
    Tensor<T> soft = teacher_logits;
    const std::size_t cols = soft.cols();
    for (std::size_t r = 0; r < soft.rows(); ++r) {
        auto row = soft.row(r);
        T mx = *std::max_element(row.begin(), row.end()) * inv_t;
        T total = 0;
        for (auto& v : row) {
            v = std::exp(v * inv_t - mx);
            total += v;
        }
        for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
    }
    auto ce = softmax_cross_entropy(scale(student_old_logits, inv_t), soft);
    return scale(ce, static_cast<T>(temperature * temperature));
}

std::vector<std::size_t> divergence_labels(std::span<const std::size_t> global_labels, std::size_t task_offset,
                                           std::size_t task_classes) {
    std::vector<std::size_t> out;
    out.reserve(global_labels.size());
    for (std::size_t g : global_labels) {
        if (g >= task_offset + task_classes) throw std::invalid_argument("divergence_labels: class from a future task");
        out.push_back(g >= task_offset ? g - task_offset : task_classes);
    }
    return out;
}

template <typename T>
Var<T> divergence_loss(Var<T> divergence_logits, const Tensor<T>& targets, std::size_t t) {
    if (t < 2) throw std::invalid_argument("divergence_loss: needs earlier tasks (t >= 2)");
    return softmax_cross_entropy(divergence_logits, targets);
}

template <typename T>
Var<T> total_loss(const LossTerms<T>& terms, double alpha, double lambda_div) {
    if (alpha < 0 || alpha >= 1) throw std::invalid_argument("total_loss: alpha must lie in [0, 1)");
    if (lambda_div < 0) throw std::invalid_argument("total_loss: lambda_div must be non-negative");
    if (!terms.kd && !terms.div) return terms.clf;
    Var<T> total = terms.kd ? add(scale(terms.clf, static_cast<T>(1 - alpha)), scale(*terms.kd, static_cast<T>(alpha)))
                            : terms.clf;
    if (terms.div) total = add(total, scale(*terms.div, static_cast<T>(lambda_div)));
    return total;
}

double sample_beta(double a, double b, Rng& rng) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return (x + y) > 0 ? x / (x + y) : 0.5;
}

MixPlan sample_mix_plan(std::size_t batch, double alpha, Rng& rng) {
    if (!(alpha > 0)) throw std::invalid_argument("mixup: alpha must be positive");
    MixPlan plan;
    plan.partner.resize(batch);
    std::iota(plan.partner.begin(), plan.partner.end(), std::size_t{0});
    std::shuffle(plan.partner.begin(), plan.partner.end(), rng);
    plan.lambda.resize(batch);
    for (auto& l : plan.lambda) l = sample_beta(alpha, alpha, rng);
    return plan;
}

template <typename T>
Tensor<T> apply_mix(const Tensor<T>& rows, const MixPlan& plan) {
    if (rows.rows() != plan.partner.size()) throw std::invalid_argument("apply_mix: batch size mismatch");
    Tensor<T> out(rows.shape);
    const std::size_t cols = rows.cols();
    for (std::size_t i = 0; i < plan.partner.size(); ++i) {
        const T l = static_cast<T>(plan.lambda[i]);
        const auto a = rows.row(i);
        const auto b = rows.row(plan.partner[i]);
        auto dst = out.row(i);
        for (std::size_t c = 0; c < cols; ++c) dst[c] = l * a[c] + (T(1) - l) * b[c];
    }
    return out;
}

template <typename T>
MixedBatch<T> mixup(const Tensor<T>& images, const Tensor<T>& targets, Rng& rng, double alpha) {
    if (images.rows() < 2) throw std::invalid_argument("mixup: batch needs at least two samples");
    if (targets.rows() != images.rows()) throw std::invalid_argument("mixup: images and targets differ in batch size");
    MixedBatch<T> out;
    out.plan = sample_mix_plan(images.rows(), alpha, rng);
    out.images = apply_mix(images, out.plan);
    out.targets = apply_mix(targets, out.plan);
    return out;
}

#define DYTOX_INSTANTIATE(T)                                                              \
    template Tensor<T> one_hot<T>(std::span<const std::size_t>, std::size_t);             \
    template Var<T> bce_classification_loss(Var<T>, const Tensor<T>&);                    \
    template Var<T> bce_classification_loss(Var<T>, std::span<const std::size_t>);        \
    template Var<T> kd_loss(Var<T>, const Tensor<T>&);                                    \
    template Var<T> kd_loss_softmax(Var<T>, const Tensor<T>&, double);                    \
    template Var<T> divergence_loss(Var<T>, const Tensor<T>&, std::size_t);               \
    template Var<T> total_loss(const LossTerms<T>&, double, double);                      \
    template Tensor<T> apply_mix(const Tensor<T>&, const MixPlan&);                       \
    template MixedBatch<T> mixup(const Tensor<T>&, const Tensor<T>&, Rng&, double);

DYTOX_INSTANTIATE(float)
DYTOX_INSTANTIATE(double)

#undef DYTOX_INSTANTIATE

}  // namespace dytox
