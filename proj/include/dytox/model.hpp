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

// Transformer with a shared self-attention encoder, one shared task-attention
// decoder block, one learned token per task, and per-task sigmoid heads.

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dytox/autodiff.hpp"

namespace dytox {

using Rng = std::mt19937_64;

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 384;
    std::size_t heads = 12;
    std::size_t sab_count = 5;
    std::size_t mlp_ratio = 4;
    // One token per task; off keeps a single token shared by every task.
    bool token_expansion = true;
    // One head per task; off uses one classifier over all concatenated task
    // embeddings that grows with every task.
    bool independent_heads = true;
    double init_std = 0.02;
    double norm_eps = 1e-6;

    std::size_t num_patches() const {
        const std::size_t side = image_size / patch_size;
        return side * side;
    }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    std::size_t pixels() const { return channels * image_size * image_size; }
    std::size_t hidden_dim() const { return mlp_ratio * embed_dim; }

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;
};

template <typename T>
struct LinearParams {
    Parameter<T> weight;  // [out x in]
    std::optional<Parameter<T>> bias;

    std::size_t in_features() const { return weight.value.shape[1]; }
    std::size_t out_features() const { return weight.value.shape[0]; }
};

template <typename T>
struct LayerNormParams {
    Parameter<T> gain;
    Parameter<T> bias;
};

template <typename T>
struct AttentionParams {
    LinearParams<T> query;  // no bias
    LinearParams<T> key;    // no bias
    LinearParams<T> value;  // no bias
    LinearParams<T> proj;   // W_o with the single output bias b_o
};

template <typename T>
struct MlpParams {
    LinearParams<T> fc1;
    LinearParams<T> fc2;
};

template <typename T>
struct PatchTokenizer {
    LinearParams<T> proj;   // [D x C*P*P], a stride-P convolution
    Parameter<T> pos_embed;  // [N x D]
};

/// Pre-norm residual block: attention then MLP, each behind a layer norm.
template <typename T>
struct BlockParams {
    LayerNormParams<T> norm1;
    AttentionParams<T> attn;
    LayerNormParams<T> norm2;
    MlpParams<T> mlp;
};

template <typename T>
using SabLayer = BlockParams<T>;
template <typename T>
using TabLayer = BlockParams<T>;

template <typename T>
struct TaskHead {
    LayerNormParams<T> norm;
    LinearParams<T> linear;
    std::size_t classes() const { return linear.out_features(); }
};

/// Training-only classifier over the newest task's classes plus one
/// "any earlier class" bucket (last index).
template <typename T>
struct DivergenceHead {
    LinearParams<T> linear;
};

template <typename T>
struct ForwardResult {
    Var<T> logits;  // [B x sum of class counts]
    Var<T> probs;   // sigmoid(logits)
    std::vector<Var<T>> embeddings;  // e_i, each [B x D]
    Var<T> patch_tokens;             // x_L, [B*N x D]
    std::size_t sab_passes = 0;      // forwards through the whole SAB stack
    std::size_t tab_passes = 0;      // forwards through the shared TAB
};

struct ParamCounts {
    std::size_t tokenizer = 0;
    std::size_t sabs = 0;
    std::size_t tab = 0;
    std::size_t tokens = 0;
    std::size_t heads = 0;
    std::size_t divergence = 0;  // training-only, excluded from total()

    std::size_t total() const { return tokenizer + sabs + tab + tokens + heads; }
};

/// Multiply-accumulate counts of one forward of a single image. Only linear
/// maps and attention score / weighted-sum terms are counted.
struct FlopCounts {
    std::size_t tokenizer = 0;
    std::size_t sab_total = 0;
    std::size_t tab_per_task = 0;
    std::size_t sa_score_per_layer = 0;  // Q.K^T term of one SAB
    std::size_t ta_score_per_task = 0;   // Q.K^T term of one TAB pass

    std::size_t total(std::size_t tasks) const { return tokenizer + sab_total + tasks * tab_per_task; }
};

FlopCounts count_flops(const ModelConfig& config);
/// Same counts for an arbitrary patch-token count N.
FlopCounts count_flops(const ModelConfig& config, std::size_t num_patches);

template <typename T>
class DyToxModel {
   public:
    DyToxModel(const ModelConfig& config, Rng& rng);

    const ModelConfig& config() const { return config_; }
    std::size_t num_tasks() const { return class_counts_.size(); }
    std::span<const std::size_t> class_counts() const { return class_counts_; }
    std::size_t num_classes() const;
    std::size_t num_classes(std::size_t tasks) const;

    /// Adds a task with `num_new_classes` classes: a fresh token (when
    /// expansion is on), a fresh head, and a fresh divergence head from the
    /// second task on. Shared blocks and earlier tokens/heads are untouched.
    void expand_task(std::size_t num_new_classes, Rng& rng);
    void drop_divergence_head() { divergence.reset(); }

    /// Runs the encoder once and the TAB once per task token over images
    /// [B x C*H*W]. `tasks` limits the output to the first tasks' classes.
    ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& images, std::optional<std::size_t> tasks = {}) const;
    /// Logits of the divergence head on the newest task embedding.
    Var<T> divergence_logits(const ForwardResult<T>& fwd) const;

    /// Sigmoid predictions without recording gradients. Safe to call from
    /// several threads on a shared model.
    Tensor<T> predict(const Tensor<T>& images, std::optional<std::size_t> tasks = {}) const;
    /// Embedding e_task (0-based) without recording gradients.
    Tensor<T> embed(const Tensor<T>& images, std::size_t task) const;

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    Parameter<T>* find_parameter(const std::string& name);
    void zero_grad();

    PatchTokenizer<T> tokenizer;
    std::vector<SabLayer<T>> sabs;
    TabLayer<T> tab;
    std::vector<Parameter<T>> tokens;   // each [1 x D]
    std::vector<TaskHead<T>> heads;     // independent-heads mode
    std::optional<TaskHead<T>> joint_head;  // shared-classifier mode
    std::optional<DivergenceHead<T>> divergence;

   private:
    ModelConfig config_;
    std::vector<std::size_t> class_counts_;
};

template <typename T>
ParamCounts count_params(const DyToxModel<T>& model);

template <typename T>
FlopCounts count_flops(const DyToxModel<T>& model) {
    return count_flops(model.config());
}

// ---------------------------------------------------------------------------
// Layer forwards. `batch` is the number of images stacked along the rows.

/// [B x C*H*W] (or [C,H,W] / [B,C,H,W]) -> [B*N x C*P*P], patches row-major,
/// each patch flattened channel-major.
template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& images, const ModelConfig& config);

/// Number of images in an image tensor accepted by unfold_patches.
template <typename T>
std::size_t image_batch(const Tensor<T>& images, const ModelConfig& config);

template <typename T>
Var<T> apply_linear(Tape<T>& tape, Var<T> x, const LinearParams<T>& p);

/// Patch projection plus positional embedding, [B*N x D].
template <typename T>
Var<T> tokenize(Tape<T>& tape, const Tensor<T>& images, const PatchTokenizer<T>& tok, const ModelConfig& config);

template <typename T>
Var<T> self_attention(Tape<T>& tape, Var<T> x, const AttentionParams<T>& p, std::size_t batch, std::size_t heads,
                      Tensor<T>* maps = nullptr);

template <typename T>
Var<T> mlp_forward(Tape<T>& tape, Var<T> x, const MlpParams<T>& p);

template <typename T>
Var<T> sab_forward(Tape<T>& tape, Var<T> x, const SabLayer<T>& layer, std::size_t batch, std::size_t heads, T eps);

/// z is [B*(N+1) x D] with the task token in row 0 of each sample. Queries
/// come from row 0 only; returns W_o A V + b_o as [B x D].
template <typename T>
Var<T> task_attention(Tape<T>& tape, Var<T> z, const AttentionParams<T>& p, std::size_t batch, std::size_t heads,
                      Tensor<T>* maps = nullptr);

/// e = c' + MLP(Norm2(c')), c' = token + TA(Norm1([token, x_L])). Returns [B x D].
template <typename T>
Var<T> tab_forward(Tape<T>& tape, Var<T> patch_tokens, Var<T> token, const TabLayer<T>& tab, std::size_t batch,
                   std::size_t heads, T eps, Tensor<T>* maps = nullptr);

template <typename T>
Var<T> head_logits(Tape<T>& tape, Var<T> embedding, const TaskHead<T>& head, T eps);

/// sigmoid(W Norm(e) + b).
template <typename T>
Var<T> head_forward(Tape<T>& tape, Var<T> embedding, const TaskHead<T>& head, T eps) {
    return sigmoid(head_logits(tape, embedding, head, eps));
}

// Parameter construction helpers, shared with checkpoint loading.
template <typename T>
LinearParams<T> make_linear(const std::string& name, std::size_t in, std::size_t out, bool bias, double std_dev,
                            Rng& rng);
template <typename T>
LayerNormParams<T> make_layer_norm(const std::string& name, std::size_t dim);

}  // namespace dytox
