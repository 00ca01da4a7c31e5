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
#include <optional>
#include <span>
#include <vector>

#include "dytox/autodiff.hpp"
#include "dytox/model.hpp"

namespace dytox {

/// alpha = |C^{1:t-1}| / |C^{1:t}| for the 1-based step t.
double alpha_schedule(std::span<const std::size_t> class_counts, std::size_t t);

template <typename T>
Tensor<T> one_hot(std::span<const std::size_t> labels, std::size_t classes);

/// Mean BCE of sigmoid predictions [B x C] against (soft) targets [B x C].
template <typename T>
Var<T> bce_classification_loss(Var<T> probs, const Tensor<T>& targets);
/// Same, against one-hot targets. Every label must be below the width.
template <typename T>
Var<T> bce_classification_loss(Var<T> probs, std::span<const std::size_t> labels);

enum class KdMode { bce, softmax };

/// Soft-target BCE between the student's old-class probabilities and the
/// teacher's probabilities. Widths must match.
template <typename T>
Var<T> kd_loss(Var<T> student_old_probs, const Tensor<T>& teacher_probs);
/// Alternative: temperature-scaled softmax distillation on logits, T^2 * CE.
template <typename T>
Var<T> kd_loss_softmax(Var<T> student_old_logits, const Tensor<T>& teacher_logits, double temperature);

/// Maps global class indices to divergence targets: classes of the current
/// task (starting at `task_offset`) keep their in-task index, anything older
/// becomes the extra class `task_classes`.
std::vector<std::size_t> divergence_labels(std::span<const std::size_t> global_labels, std::size_t task_offset,
                                           std::size_t task_classes);

/// Softmax cross-entropy over the |C^t|+1 divergence outputs. Throws for t < 2.
template <typename T>
Var<T> divergence_loss(Var<T> divergence_logits, const Tensor<T>& targets, std::size_t t);

template <typename T>
struct LossTerms {
    Var<T> clf;
    std::optional<Var<T>> kd;
    std::optional<Var<T>> div;
};

/// (1 - alpha) * clf + alpha * kd + lambda_div * div. Absent terms drop out;
/// without a KD term the classification weight is 1.
template <typename T>
Var<T> total_loss(const LossTerms<T>& terms, double alpha, double lambda_div);

// ---------------------------------------------------------------------------
// MixUp

/// Per-sample partner (one random permutation of the batch) and mixing weight.
struct MixPlan {
    std::vector<std::size_t> partner;
    std::vector<double> lambda;
};

double sample_beta(double a, double b, Rng& rng);
MixPlan sample_mix_plan(std::size_t batch, double alpha, Rng& rng);

/// Row i becomes lambda_i * row_i + (1 - lambda_i) * row_partner(i).
template <typename T>
Tensor<T> apply_mix(const Tensor<T>& rows, const MixPlan& plan);

template <typename T>
struct MixedBatch {
    Tensor<T> images;
    Tensor<T> targets;
    MixPlan plan;
};

/// lambda ~ Beta(alpha, alpha) per pair. Needs at least two samples.
template <typename T>
MixedBatch<T> mixup(const Tensor<T>& images, const Tensor<T>& targets, Rng& rng, double alpha = 0.8);

}  // namespace dytox
