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

#include "dytox/model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dytox {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (image_size == 0 || channels == 0 || patch_size == 0) fail("image_size, channels and patch_size must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (embed_dim == 0 || heads == 0) fail("embed_dim and heads must be positive");
    if (embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (sab_count < 1) fail("sab_count must be at least 1");
    if (mlp_ratio < 1) fail("mlp_ratio must be at least 1");
    if (!(init_std > 0)) fail("init_std must be positive");
    if (!(norm_eps > 0)) fail("norm_eps must be positive");
}

FlopCounts count_flops(const ModelConfig& c) { return count_flops(c, c.num_patches()); }

FlopCounts count_flops(const ModelConfig& c, std::size_t n) {
    const std::size_t d = c.embed_dim;
    const std::size_t mlp = 2 * d * c.hidden_dim();
    FlopCounts f;
    f.tokenizer = n * c.patch_dim() * d;
    f.sa_score_per_layer = n * n * d;
    const std::size_t sab = 4 * n * d * d          // Q, K, V and output projections
                            + 2 * f.sa_score_per_layer  // scores and weighted sum
                            + n * mlp;
    f.sab_total = c.sab_count * sab;
    f.ta_score_per_task = (n + 1) * d;
    f.tab_per_task = d * d                       // query from the task token only
                     + 2 * (n + 1) * d * d       // keys and values over [token, x_L]
                     + 2 * f.ta_score_per_task   // one query row of scores and weighted sum
                     + d * d                     // output projection
                     + mlp;                      // MLP on the single token
    return f;
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, double std_dev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std_dev);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) {
        double x = dist(rng);
        while (std::abs(x) > 2 * std_dev) x = dist(rng);
        v = static_cast<T>(x);
    }
    return t;
}

template <typename T>
std::size_t linear_size(const LinearParams<T>& p) {
    return p.weight.size() + (p.bias ? p.bias->size() : 0);
}

template <typename T>
std::size_t norm_size(const LayerNormParams<T>& p) {
    return p.gain.size() + p.bias.size();
}

template <typename T>
std::size_t block_size(const BlockParams<T>& b) {
    return norm_size(b.norm1) + norm_size(b.norm2) + linear_size(b.attn.query) + linear_size(b.attn.key) +
           linear_size(b.attn.value) + linear_size(b.attn.proj) + linear_size(b.mlp.fc1) + linear_size(b.mlp.fc2);
}

template <typename T>
std::size_t head_size(const TaskHead<T>& h) {
    return norm_size(h.norm) + linear_size(h.linear);
}

template <typename P, typename Fn>
void visit_linear(P& p, Fn&& fn) {
    fn(p.weight);
    if (p.bias) fn(*p.bias);
}

template <typename P, typename Fn>
void visit_norm(P& p, Fn&& fn) {
    fn(p.gain);
    fn(p.bias);
}

template <typename B, typename Fn>
void visit_block(B& b, Fn&& fn) {
    visit_norm(b.norm1, fn);
    visit_linear(b.attn.query, fn);
    visit_linear(b.attn.key, fn);
    visit_linear(b.attn.value, fn);
    visit_linear(b.attn.proj, fn);
    visit_norm(b.norm2, fn);
    visit_linear(b.mlp.fc1, fn);
    visit_linear(b.mlp.fc2, fn);
}

template <typename H, typename Fn>
void visit_head(H& h, Fn&& fn) {
    visit_norm(h.norm, fn);
    visit_linear(h.linear, fn);
}

template <typename M, typename Fn>
void visit_model(M& m, Fn&& fn) {
    visit_linear(m.tokenizer.proj, fn);
    fn(m.tokenizer.pos_embed);
    for (auto& s : m.sabs) visit_block(s, fn);
    visit_block(m.tab, fn);
    for (auto& t : m.tokens) fn(t);
    for (auto& h : m.heads) visit_head(h, fn);
    if (m.joint_head) visit_head(*m.joint_head, fn);
    if (m.divergence) visit_linear(m.divergence->linear, fn);
}

template <typename T>
BlockParams<T> make_block(const std::string& name, const ModelConfig& c, Rng& rng) {
    const std::size_t d = c.embed_dim;
    const double s = c.init_std;
    BlockParams<T> b;
    b.norm1 = make_layer_norm<T>(name + ".norm1", d);
    b.attn.query = make_linear<T>(name + ".attn.query", d, d, false, s, rng);
    b.attn.key = make_linear<T>(name + ".attn.key", d, d, false, s, rng);
    b.attn.value = make_linear<T>(name + ".attn.value", d, d, false, s, rng);
    b.attn.proj = make_linear<T>(name + ".attn.proj", d, d, true, s, rng);
    b.norm2 = make_layer_norm<T>(name + ".norm2", d);
    b.mlp.fc1 = make_linear<T>(name + ".mlp.fc1", d, c.hidden_dim(), true, s, rng);
    b.mlp.fc2 = make_linear<T>(name + ".mlp.fc2", c.hidden_dim(), d, true, s, rng);
    return b;
}

}  // namespace

template <typename T>
LinearParams<T> make_linear(const std::string& name, std::size_t in, std::size_t out, bool bias, double std_dev,
                            Rng& rng) {
    LinearParams<T> p;
    p.weight = Parameter<T>(name + ".weight", trunc_normal<T>(Shape{out, in}, std_dev, rng));
    if (bias) p.bias = Parameter<T>(name + ".bias", Tensor<T>(Shape{out}));
    return p;
}

template <typename T>
LayerNormParams<T> make_layer_norm(const std::string& name, std::size_t dim) {
    return {Parameter<T>(name + ".gain", Tensor<T>(Shape{dim}, T(1))), Parameter<T>(name + ".bias", Tensor<T>(Shape{dim}))};
}

// ---------------------------------------------------------------------------
// DyToxModel

template <typename T>
DyToxModel<T>::DyToxModel(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.embed_dim;
    tokenizer.proj = make_linear<T>("tokenizer.proj", config_.patch_dim(), d, true, config_.init_std, rng);
    tokenizer.pos_embed =
        Parameter<T>("tokenizer.pos_embed", trunc_normal<T>(Shape{config_.num_patches(), d}, config_.init_std, rng));
    for (std::size_t l = 0; l < config_.sab_count; ++l) sabs.push_back(make_block<T>("sab." + std::to_string(l), config_, rng));
    tab = make_block<T>("tab", config_, rng);
}

template <typename T>
std::size_t DyToxModel<T>::num_classes() const {
    return num_classes(num_tasks());
}

template <typename T>
std::size_t DyToxModel<T>::num_classes(std::size_t tasks) const {
    return std::accumulate(class_counts_.begin(), class_counts_.begin() + static_cast<std::ptrdiff_t>(tasks), std::size_t{0});
}

template <typename T>
void DyToxModel<T>::expand_task(std::size_t num_new_classes, Rng& rng) {
    if (num_new_classes == 0) throw std::invalid_argument("expand_task: a task needs at least one class");
    const std::size_t d = config_.embed_dim;
    const std::size_t task = class_counts_.size();
    class_counts_.push_back(num_new_classes);

    if (config_.token_expansion || tokens.empty()) {
        tokens.emplace_back("tokens." + std::to_string(tokens.size()), trunc_normal<T>(Shape{1, d}, config_.init_std, rng));
    }

    if (config_.independent_heads) {
        const std::string name = "heads." + std::to_string(task);
        heads.push_back({make_layer_norm<T>(name + ".norm", d),
                         make_linear<T>(name + ".linear", d, num_new_classes, true, config_.init_std, rng)});
    } else {
        // Grow the shared classifier: new rows for the new classes and, with
        // expansion, new input columns for the new task embedding.
        const std::size_t in = tokens.size() * d;
        const std::size_t out = num_classes();
        TaskHead<T> grown{make_layer_norm<T>("joint_head.norm", in),
                          make_linear<T>("joint_head.linear", in, out, true, config_.init_std, rng)};
        if (joint_head) {
            const auto& old = *joint_head;
            const std::size_t old_in = old.linear.in_features();
            const std::size_t old_out = old.linear.out_features();
            for (std::size_t r = 0; r < old_out; ++r) {
                std::copy_n(old.linear.weight.value.data.data() + r * old_in, old_in,
                            grown.linear.weight.value.data.data() + r * in);
                grown.linear.bias->value[r] = old.linear.bias->value[r];
            }
            std::copy_n(old.norm.gain.value.data.data(), old_in, grown.norm.gain.value.data.data());
            std::copy_n(old.norm.bias.value.data.data(), old_in, grown.norm.bias.value.data.data());
        }
        joint_head = std::move(grown);
    }

    if (class_counts_.size() > 1) {
        divergence = DivergenceHead<T>{make_linear<T>("divergence.linear", d, num_new_classes + 1, true, config_.init_std, rng)};
    } else {
        divergence.reset();
    }
}

template <typename T>
ForwardResult<T> DyToxModel<T>::forward(Tape<T>& tape, const Tensor<T>& images, std::optional<std::size_t> tasks) const {
    const std::size_t t = tasks.value_or(num_tasks());
    if (t > num_tasks()) {
        throw std::invalid_argument("forward: asked for " + std::to_string(t) + " tasks but only " +
                                    std::to_string(num_tasks()) + " are learned");
    }
    if (t == 0) throw std::invalid_argument("forward: model has no task yet");
    const std::size_t batch = image_batch(images, config_);
    const T eps = static_cast<T>(config_.norm_eps);

    ForwardResult<T> out;
    Var<T> x = tokenize(tape, images, tokenizer, config_);
    for (const auto& layer : sabs) x = sab_forward(tape, x, layer, batch, config_.heads, eps);
    out.sab_passes = 1;
    out.patch_tokens = x;

    // The shared classifier consumes every task embedding; its output is sliced afterwards.
    const std::size_t embed_tasks = config_.independent_heads ? std::min(t, tokens.size()) : tokens.size();
    for (std::size_t i = 0; i < embed_tasks; ++i) {
        out.embeddings.push_back(tab_forward(tape, x, tape.param(tokens[i]), tab, batch, config_.heads, eps));
        ++out.tab_passes;
    }

    if (config_.independent_heads) {
        std::vector<Var<T>> parts;
        for (std::size_t i = 0; i < t; ++i) {
            const Var<T>& e = out.embeddings[std::min(i, out.embeddings.size() - 1)];
            parts.push_back(head_logits(tape, e, heads[i], eps));
        }
        out.logits = parts.size() == 1 ? parts[0] : concat_cols(parts);
    } else {
        Var<T> joint = out.embeddings.size() == 1 ? out.embeddings[0] : concat_cols(out.embeddings);
        out.logits = head_logits(tape, joint, *joint_head, eps);
        if (t < num_tasks()) out.logits = slice_cols(out.logits, 0, num_classes(t));
    }
    out.probs = sigmoid(out.logits);
    return out;
}

template <typename T>
Var<T> DyToxModel<T>::divergence_logits(const ForwardResult<T>& fwd) const {
    if (!divergence) throw std::logic_error("divergence head exists only while training task 2 onwards");
    return apply_linear(*fwd.logits.tape, fwd.embeddings.back(), divergence->linear);
}

template <typename T>
Tensor<T> DyToxModel<T>::predict(const Tensor<T>& images, std::optional<std::size_t> tasks) const {
    Tape<T> tape(false);
    return forward(tape, images, tasks).probs.value();
}

template <typename T>
Tensor<T> DyToxModel<T>::embed(const Tensor<T>& images, std::size_t task) const {
    if (task >= num_tasks()) throw std::invalid_argument("embed: unknown task");
    Tape<T> tape(false);
    const std::size_t batch = image_batch(images, config_);
    const T eps = static_cast<T>(config_.norm_eps);
    Var<T> x = tokenize(tape, images, tokenizer, config_);
    for (const auto& layer : sabs) x = sab_forward(tape, x, layer, batch, config_.heads, eps);
    const auto& token = tokens[std::min(task, tokens.size() - 1)];
    return tab_forward(tape, x, tape.param(token), tab, batch, config_.heads, eps).value();
}

template <typename T>
std::vector<Parameter<T>*> DyToxModel<T>::parameters() {
    std::vector<Parameter<T>*> out;
    visit_model(*this, [&](Parameter<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> DyToxModel<T>::parameters() const {
    std::vector<const Parameter<T>*> out;
    visit_model(*this, [&](const Parameter<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
Parameter<T>* DyToxModel<T>::find_parameter(const std::string& name) {
    for (auto* p : parameters())
        if (p->name == name) return p;
    return nullptr;
}

template <typename T>
void DyToxModel<T>::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
ParamCounts count_params(const DyToxModel<T>& m) {
    ParamCounts c;
    c.tokenizer = linear_size(m.tokenizer.proj) + m.tokenizer.pos_embed.size();
    for (const auto& s : m.sabs) c.sabs += block_size(s);
    c.tab = block_size(m.tab);
    for (const auto& t : m.tokens) c.tokens += t.size();
    for (const auto& h : m.heads) c.heads += head_size(h);
    if (m.joint_head) c.heads += head_size(*m.joint_head);
    if (m.divergence) c.divergence = linear_size(m.divergence->linear);
    return c;
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
std::size_t image_batch(const Tensor<T>& images, const ModelConfig& c) {
    const std::size_t s = c.image_size;
    switch (images.rank()) {
        case 2:
            if (images.shape[1] == c.pixels()) return images.shape[0];
            break;
        case 3:
            if (images.shape == Shape{c.channels, s, s}) return 1;
            break;
        case 4:
            if (images.shape[1] == c.channels && images.shape[2] == s && images.shape[3] == s) return images.shape[0];
            break;
        default:
            break;
    }
    throw std::invalid_argument("image tensor " + to_string(images.shape) + " does not match " +
                                std::to_string(c.channels) + "x" + std::to_string(s) + "x" + std::to_string(s));
}

template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& images, const ModelConfig& c) {
    const std::size_t batch = image_batch(images, c);
    const std::size_t s = c.image_size, p = c.patch_size, side = s / p;
    const std::size_t n = c.num_patches(), pd = c.patch_dim();
    Tensor<T> out(Shape{batch * n, pd});
    for (std::size_t b = 0; b < batch; ++b) {
        const T* img = images.data.data() + b * c.pixels();
        for (std::size_t py = 0; py < side; ++py) {
            for (std::size_t px = 0; px < side; ++px) {
                T* dst = out.data.data() + (b * n + py * side + px) * pd;
                for (std::size_t ch = 0; ch < c.channels; ++ch)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            *dst++ = img[(ch * s + py * p + dy) * s + px * p + dx];
            }
        }
    }
    return out;
}

template <typename T>
Var<T> apply_linear(Tape<T>& tape, Var<T> x, const LinearParams<T>& p) {
    std::optional<Var<T>> bias;
    if (p.bias) bias = tape.param(*p.bias);
    return linear(x, tape.param(p.weight), bias);
}

template <typename T>
Var<T> tokenize(Tape<T>& tape, const Tensor<T>& images, const PatchTokenizer<T>& tok, const ModelConfig& config) {
    Var<T> patches = tape.constant(unfold_patches(images, config));
    return add_tiled(apply_linear(tape, patches, tok.proj), tape.param(tok.pos_embed));
}

template <typename T>
Var<T> self_attention(Tape<T>& tape, Var<T> x, const AttentionParams<T>& p, std::size_t batch, std::size_t heads,
                      Tensor<T>* maps) {
    Var<T> q = apply_linear(tape, x, p.query);
    Var<T> k = apply_linear(tape, x, p.key);
    Var<T> v = apply_linear(tape, x, p.value);
    return apply_linear(tape, attention(q, k, v, batch, heads, maps), p.proj);
}

template <typename T>
Var<T> mlp_forward(Tape<T>& tape, Var<T> x, const MlpParams<T>& p) {
    return apply_linear(tape, gelu(apply_linear(tape, x, p.fc1)), p.fc2);
}

namespace {
template <typename T>
Var<T> norm(Tape<T>& tape, Var<T> x, const LayerNormParams<T>& p, T eps) {
    return layer_norm(x, tape.param(p.gain), tape.param(p.bias), eps);
}
}  // namespace

template <typename T>
Var<T> sab_forward(Tape<T>& tape, Var<T> x, const SabLayer<T>& layer, std::size_t batch, std::size_t heads, T eps) {
    Var<T> mid = add(x, self_attention(tape, norm(tape, x, layer.norm1, eps), layer.attn, batch, heads));
    return add(mid, mlp_forward(tape, norm(tape, mid, layer.norm2, eps), layer.mlp));
}

template <typename T>
Var<T> task_attention(Tape<T>& tape, Var<T> z, const AttentionParams<T>& p, std::size_t batch, std::size_t heads,
                      Tensor<T>* maps) {
    if (batch == 0 || z.rows() % batch != 0) throw std::invalid_argument("task_attention: rows not divisible by batch");
    const std::size_t per_sample = z.rows() / batch;
    Var<T> q = apply_linear(tape, strided_rows(z, per_sample, 0), p.query);
    Var<T> k = apply_linear(tape, z, p.key);
    Var<T> v = apply_linear(tape, z, p.value);
    return apply_linear(tape, attention(q, k, v, batch, heads, maps), p.proj);
}

template <typename T>
Var<T> tab_forward(Tape<T>& tape, Var<T> patch_tokens, Var<T> token, const TabLayer<T>& tab, std::size_t batch,
                   std::size_t heads, T eps, Tensor<T>* maps) {
    Var<T> z = prepend_row(token, patch_tokens, batch);
    Var<T> ta = task_attention(tape, norm(tape, z, tab.norm1, eps), tab.attn, batch, heads, maps);
    Var<T> c = add(repeat_rows(token, batch), ta);
    return add(c, mlp_forward(tape, norm(tape, c, tab.norm2, eps), tab.mlp));
}

template <typename T>
Var<T> head_logits(Tape<T>& tape, Var<T> embedding, const TaskHead<T>& head, T eps) {
    return apply_linear(tape, norm(tape, embedding, head.norm, eps), head.linear);
}

#define DYTOX_INSTANTIATE(T)                                                                                      \
    template class DyToxModel<T>;                                                                                 \
    template ParamCounts count_params(const DyToxModel<T>&);                                                      \
    template LinearParams<T> make_linear<T>(const std::string&, std::size_t, std::size_t, bool, double, Rng&);    \
    template LayerNormParams<T> make_layer_norm<T>(const std::string&, std::size_t);                              \
    template std::size_t image_batch(const Tensor<T>&, const ModelConfig&);                                       \
    template Tensor<T> unfold_patches(const Tensor<T>&, const ModelConfig&);                                      \
    template Var<T> apply_linear(Tape<T>&, Var<T>, const LinearParams<T>&);                                       \
    template Var<T> tokenize(Tape<T>&, const Tensor<T>&, const PatchTokenizer<T>&, const ModelConfig&);           \
    template Var<T> self_attention(Tape<T>&, Var<T>, const AttentionParams<T>&, std::size_t, std::size_t,         \
                                   Tensor<T>*);                                                                   \
    template Var<T> mlp_forward(Tape<T>&, Var<T>, const MlpParams<T>&);                                           \
    template Var<T> sab_forward(Tape<T>&, Var<T>, const SabLayer<T>&, std::size_t, std::size_t, T);               \
    template Var<T> task_attention(Tape<T>&, Var<T>, const AttentionParams<T>&, std::size_t, std::size_t,         \
                                   Tensor<T>*);                                                                   \
    template Var<T> tab_forward(Tape<T>&, Var<T>, Var<T>, const TabLayer<T>&, std::size_t, std::size_t, T,        \
                                Tensor<T>*);                                                                      \
    template Var<T> head_logits(Tape<T>&, Var<T>, const TaskHead<T>&, T);

DYTOX_INSTANTIATE(float)
DYTOX_INSTANTIATE(double)

#undef DYTOX_INSTANTIATE

}  // namespace dytox
