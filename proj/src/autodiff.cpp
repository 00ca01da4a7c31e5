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

#include "dytox/autodiff.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "dytox/kernels.hpp"

namespace dytox {

namespace k = kernels::omp;

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::record(Node node) {
    const Tensor<T>& v = node.external ? *node.external : node.value;
    if (!v.all_finite()) {
        throw NonFiniteError("non-finite value in tape node " + std::to_string(nodes_.size()) +
                             " of shape " + to_string(v.shape));
    }
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return record(std::move(n));
}

template <typename T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    n.requires_grad = grad_enabled_ && p.requires_grad;
    // Grad-recording tapes are only built over parameters the caller owns
    // mutably; inference tapes never write through this pointer.
    if (n.requires_grad) n.param = const_cast<Parameter<T>*>(&p);
    return record(std::move(n));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
        for (const auto& in : inputs) {
            if (in.tape != this) throw std::invalid_argument("op mixes vars from different tapes");
            n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
        }
        if (n.requires_grad) n.backward = std::move(backward);
    }
    return record(std::move(n));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return push(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty() && !value(id).empty()) n.grad = Tensor<T>(value(id).shape);
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("loss belongs to another tape");
    if (value(loss.id).size() != 1) {
        throw std::invalid_argument("backward() needs a scalar loss, got " + to_string(value(loss.id).shape));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param) {
            Parameter<T>& p = *n.param;
            if (p.grad.shape != p.value.shape) p.grad = Tensor<T>(p.value.shape);
            for (std::size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + to_string(t.shape));
}

template <typename T>
bool needs(Tape<T>& tape, Var<T> v) {
    return tape.requires_grad(v.id);
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require_rank2(av, "matmul");
    require_rank2(bv, "matmul");
    const std::size_t m = av.shape[0], kk = av.shape[1], n = bv.shape[1];
    if (bv.shape[0] != kk) {
        throw std::invalid_argument("matmul: inner extents differ: " + to_string(av.shape) + " x " + to_string(bv.shape));
    }
    Tensor<T> out(Shape{m, n});
    k::gemm_nn<T>(av.span(), bv.span(), out.span(), m, kk, n, false);
    return a.tape->push(std::move(out), {a, b}, [a, b, m, kk, n](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, a)) k::gemm_nt<T>(g, t.value(b.id).span(), t.grad_span(a.id), m, n, kk, true);
        if (needs(t, b)) k::gemm_tn<T>(t.value(a.id).span(), g, t.grad_span(b.id), kk, m, n, true);
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    require_rank2(xv, "linear");
    require_rank2(wv, "linear");
    const std::size_t rows = xv.shape[0], in = xv.shape[1], out_dim = wv.shape[0];
    if (wv.shape[1] != in) {
        throw std::invalid_argument("linear: input width " + std::to_string(in) + " vs weight " + to_string(wv.shape));
    }
    Tensor<T> out(Shape{rows, out_dim});
    k::gemm_nt<T>(xv.span(), wv.span(), out.span(), rows, in, out_dim, false);
    std::vector<Var<T>> inputs{x, weight};
    if (bias) {
        const auto& bv = bias->value();
        if (bv.size() != out_dim) throw std::invalid_argument("linear: bias size mismatch");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < out_dim; ++c) out.data[r * out_dim + c] += bv[c];
        inputs.push_back(*bias);
    }
    return x.tape->push(std::move(out), inputs, [x, weight, bias, rows, in, out_dim](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, x)) k::gemm_nn<T>(g, t.value(weight.id).span(), t.grad_span(x.id), rows, out_dim, in, true);
        if (needs(t, weight)) k::gemm_tn<T>(g, t.value(x.id).span(), t.grad_span(weight.id), out_dim, rows, in, true);
        if (bias && needs(t, *bias)) {
            auto gb = t.grad_span(bias->id);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
        }
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    if (!a.value().same_shape(b.value())) {
        throw std::invalid_argument("add: shapes differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Tensor<T> out = a.value();
    add_into<T>(out.span(), b.value().span());
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, a)) add_into<T>(t.grad_span(a.id), g);
        if (needs(t, b)) add_into<T>(t.grad_span(b.id), g);
    });
}

template <typename T>
Var<T> add_tiled(Var<T> x, Var<T> p) {
    const auto& xv = x.value();
    const auto& pv = p.value();
    const std::size_t block = pv.size();
    if (block == 0 || xv.size() % block != 0 || xv.cols() != pv.cols()) {
        throw std::invalid_argument("add_tiled: " + to_string(pv.shape) + " does not tile " + to_string(xv.shape));
    }
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += pv.data[i % block];
    return x.tape->push(std::move(out), {x, p}, [x, p, block](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, x)) add_into<T>(t.grad_span(x.id), g);
        if (needs(t, p)) {
            auto gp = t.grad_span(p.id);
            for (std::size_t i = 0; i < g.size(); ++i) gp[i % block] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    if (!a.value().same_shape(b.value())) throw std::invalid_argument("sub: shape mismatch");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, a)) add_into<T>(t.grad_span(a.id), g);
        if (needs(t, b)) {
            auto gb = t.grad_span(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    if (!a.value().same_shape(b.value())) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, a)) {
            auto ga = t.grad_span(a.id);
            const auto& bv = t.value(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (needs(t, b)) {
            auto gb = t.grad_span(b.id);
            const auto& av = t.value(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= s;
    return a.tape->push(std::move(out), {a}, [a, s](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        auto ga = t.grad_span(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T acc = 0;
    for (T v : a.value().data) acc += v;
    return a.tape->push(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (auto& v : t.grad_span(a.id)) v += g;
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.data) {
        if (v >= 0) {
            v = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    return x.tape->push(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        const auto& y = t.value(self);
        auto gx = t.grad_span(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
}

template <typename T>
Var<T> gelu(Var<T> x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    Tensor<T> out = x.value();
    for (auto& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    return x.tape->push(std::move(out), {x}, [x, inv_sqrt2](Tape<T>& t, std::size_t self) {
        const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
        std::span<const T> g = t.grad(self).span();
        const auto& xv = t.value(x.id);
        auto gx = t.grad_span(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xv[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw std::invalid_argument("softmax: axis out of range for " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Tensor<T> out = x.value();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            T* base = out.data.data() + o * len * inner + in;
            T mx = base[0];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, base[j * inner]);
            T total = 0;
            for (std::size_t j = 0; j < len; ++j) {
                base[j * inner] = std::exp(base[j * inner] - mx);
                total += base[j * inner];
            }
            for (std::size_t j = 0; j < len; ++j) base[j * inner] /= total;
        }
    }
    return x.tape->push(std::move(out), {x}, [x, outer, inner, len](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        const auto& y = t.value(self);
        auto gx = t.grad_span(x.id);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t j = 0; j < len; ++j) dot += y[base + j * inner] * g[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t i = base + j * inner;
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    const auto& xv = x.value();
    if (xv.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
    const std::size_t dim = xv.shape.back();
    if (gain.value().size() != dim || bias.value().size() != dim) {
        throw std::invalid_argument("layer_norm: gain/bias width does not match last extent " + std::to_string(dim));
    }
    const std::size_t rows = xv.size() / dim;
    Tensor<T> out(xv.shape);
    auto stats = std::make_shared<std::vector<T>>(2 * rows);
    std::span<T> mean_s(stats->data(), rows), rstd_s(stats->data() + rows, rows);
    k::layer_norm_forward<T>(xv.span(), gain.value().span(), bias.value().span(), out.span(), mean_s, rstd_s,
                             rows, dim, eps);
    return x.tape->push(std::move(out), {x, gain, bias}, [x, gain, bias, stats, rows, dim](Tape<T>& t, std::size_t self) {
        std::span<const T> mean_s(stats->data(), rows), rstd_s(stats->data() + rows, rows);
        // Zero-sized scratch for the parts nobody needs.
        Tensor<T> scratch_dx, scratch_g, scratch_b;
        std::span<T> dx = needs(t, x) ? t.grad_span(x.id) : (scratch_dx = Tensor<T>(t.value(x.id).shape)).span();
        std::span<T> dg = needs(t, gain) ? t.grad_span(gain.id) : (scratch_g = Tensor<T>(Shape{dim})).span();
        std::span<T> db = needs(t, bias) ? t.grad_span(bias.id) : (scratch_b = Tensor<T>(Shape{dim})).span();
        k::layer_norm_backward<T>(t.value(x.id).span(), t.value(gain.id).span(), mean_s, rstd_s,
                                  t.grad(self).span(), dx, dg, db, rows, dim);
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
        widths.push_back(p.value().cols());
        total += widths.back();
    }
    Tensor<T> out(Shape{rows, total});
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& pv = parts[i].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pv.data.data() + r * widths[i], widths[i], out.data.data() + r * total + off);
        off += widths[i];
    }
    return parts[0].tape->push(std::move(out), parts, [parts, widths, rows, total](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        std::size_t off = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (needs(t, parts[i])) {
                auto gp = t.grad_span(parts[i].id);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[i]; ++c) gp[r * widths[i] + c] += g[r * total + off + c];
            }
            off += widths[i];
        }
    });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
    const auto& xv = x.value();
    require_rank2(xv, "slice_cols");
    const std::size_t rows = xv.shape[0], cols = xv.shape[1];
    if (begin > end || end > cols) throw std::invalid_argument("slice_cols: range out of bounds");
    const std::size_t w = end - begin;
    Tensor<T> out(Shape{rows, w});
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(xv.data.data() + r * cols + begin, w, out.data.data() + r * w);
    return x.tape->push(std::move(out), {x}, [x, rows, cols, begin, w](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        auto gx = t.grad_span(x.id);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
    });
}

template <typename T>
Var<T> prepend_row(Var<T> row, Var<T> x, std::size_t groups) {
    const auto& rv = row.value();
    const auto& xv = x.value();
    require_rank2(xv, "prepend_row");
    const std::size_t dim = xv.shape[1];
    if (rv.size() != dim) throw std::invalid_argument("prepend_row: row width mismatch");
    if (groups == 0 || xv.shape[0] % groups != 0) throw std::invalid_argument("prepend_row: rows not divisible by groups");
    const std::size_t n = xv.shape[0] / groups;
    Tensor<T> out(Shape{groups * (n + 1), dim});
    for (std::size_t gi = 0; gi < groups; ++gi) {
        T* dst = out.data.data() + gi * (n + 1) * dim;
        std::copy_n(rv.data.data(), dim, dst);
        std::copy_n(xv.data.data() + gi * n * dim, n * dim, dst + dim);
    }
    return x.tape->push(std::move(out), {row, x}, [row, x, groups, n, dim](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        if (needs(t, row)) {
            auto gr = t.grad_span(row.id);
            for (std::size_t gi = 0; gi < groups; ++gi)
                for (std::size_t c = 0; c < dim; ++c) gr[c] += g[gi * (n + 1) * dim + c];
        }
        if (needs(t, x)) {
            auto gx = t.grad_span(x.id);
            for (std::size_t gi = 0; gi < groups; ++gi)
                add_into<T>(gx.subspan(gi * n * dim, n * dim), g.subspan(gi * (n + 1) * dim + dim, n * dim));
        }
    });
}

template <typename T>
Var<T> strided_rows(Var<T> x, std::size_t stride, std::size_t offset) {
    const auto& xv = x.value();
    require_rank2(xv, "strided_rows");
    const std::size_t rows = xv.shape[0], dim = xv.shape[1];
    if (stride == 0 || offset >= stride || rows % stride != 0) throw std::invalid_argument("strided_rows: bad stride");
    const std::size_t count = rows / stride;
    Tensor<T> out(Shape{count, dim});
    for (std::size_t i = 0; i < count; ++i)
        std::copy_n(xv.data.data() + (i * stride + offset) * dim, dim, out.data.data() + i * dim);
    return x.tape->push(std::move(out), {x}, [x, stride, offset, count, dim](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        auto gx = t.grad_span(x.id);
        for (std::size_t i = 0; i < count; ++i)
            add_into<T>(gx.subspan((i * stride + offset) * dim, dim), g.subspan(i * dim, dim));
    });
}

template <typename T>
Var<T> repeat_rows(Var<T> row, std::size_t n) {
    const auto& rv = row.value();
    const std::size_t dim = rv.size();
    Tensor<T> out(Shape{n, dim});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(rv.data.data(), dim, out.data.data() + i * dim);
    return row.tape->push(std::move(out), {row}, [row, n, dim](Tape<T>& t, std::size_t self) {
        std::span<const T> g = t.grad(self).span();
        auto gr = t.grad_span(row.id);
        for (std::size_t i = 0; i < n; ++i) add_into<T>(gr, g.subspan(i * dim, dim));
    });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> kv_k, Var<T> v, std::size_t batch, std::size_t heads, Tensor<T>* maps) {
    const auto& qv = q.value();
    const auto& kvv = kv_k.value();
    const auto& vv = v.value();
    require_rank2(qv, "attention");
    require_rank2(kvv, "attention");
    const std::size_t dim = qv.shape[1];
    if (kvv.shape != vv.shape || kvv.shape[1] != dim) throw std::invalid_argument("attention: q/k/v widths differ");
    if (heads == 0 || dim % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    if (batch == 0 || qv.shape[0] % batch != 0 || kvv.shape[0] % batch != 0) {
        throw std::invalid_argument("attention: rows not divisible by batch");
    }
    kernels::AttentionDims dims{batch, heads, qv.shape[0] / batch, kvv.shape[0] / batch, dim};
    Tensor<T> out(qv.shape);
    auto probs = std::make_shared<std::vector<T>>(dims.prob_count());
    k::attention_forward<T>(qv.span(), kvv.span(), vv.span(), out.span(), *probs, dims);
    if (maps) *maps = Tensor<T>(Shape{dims.batch, dims.heads, dims.queries, dims.keys}, *probs);
    return q.tape->push(std::move(out), {q, kv_k, v}, [q, kv_k, v, dims, probs](Tape<T>& t, std::size_t self) {
        Tensor<T> sq, sk, sv;
        std::span<T> dq = needs(t, q) ? t.grad_span(q.id) : (sq = Tensor<T>(t.value(q.id).shape)).span();
        std::span<T> dk = needs(t, kv_k) ? t.grad_span(kv_k.id) : (sk = Tensor<T>(t.value(kv_k.id).shape)).span();
        std::span<T> dv = needs(t, v) ? t.grad_span(v.id) : (sv = Tensor<T>(t.value(v.id).shape)).span();
        k::attention_backward<T>(t.value(q.id).span(), t.value(kv_k.id).span(), t.value(v.id).span(), *probs,
                                 t.grad(self).span(), dq, dk, dv, dims);
    });
}

template <typename T>
Var<T> binary_cross_entropy(Var<T> probs, const Tensor<T>& targets, T clamp) {
    const auto& p = probs.value();
    if (!p.same_shape(targets)) {
        throw std::invalid_argument("binary_cross_entropy: probabilities " + to_string(p.shape) + " vs targets " +
                                    to_string(targets.shape));
    }
    const std::size_t n = p.size();
    if (n == 0) throw std::invalid_argument("binary_cross_entropy: empty input");
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T pc = std::clamp(p[i], clamp, T(1) - clamp);
        acc -= targets[i] * std::log(pc) + (T(1) - targets[i]) * std::log(T(1) - pc);
    }
    auto tgt = std::make_shared<Tensor<T>>(targets);
    return probs.tape->push(Tensor<T>::scalar(acc / static_cast<T>(n)), {probs}, [probs, tgt, clamp, n](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] / static_cast<T>(n);
        const auto& pv = t.value(probs.id);
        auto gp = t.grad_span(probs.id);
        for (std::size_t i = 0; i < n; ++i) {
            const T pi = pv[i];
            if (pi < clamp || pi > T(1) - clamp) continue;  // clamped: flat
            const T y = (*tgt)[i];
            gp[i] += g * (-(y / pi) + (T(1) - y) / (T(1) - pi));
        }
    });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets) {
    const auto& z = logits.value();
    require_rank2(z, "softmax_cross_entropy");
    if (!z.same_shape(targets)) throw std::invalid_argument("softmax_cross_entropy: target shape mismatch");
    const std::size_t rows = z.shape[0], cols = z.shape[1];
    if (rows == 0 || cols == 0) throw std::invalid_argument("softmax_cross_entropy: empty input");
    auto probs = std::make_shared<Tensor<T>>(z.shape);
    T acc = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* zr = z.data.data() + r * cols;
        T mx = zr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, zr[c]);
        T total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(zr[c] - mx);
        const T lse = mx + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) {
            probs->data[r * cols + c] = std::exp(zr[c] - lse);
            acc -= targets.data[r * cols + c] * (zr[c] - lse);
        }
    }
    auto tgt = std::make_shared<Tensor<T>>(targets);
    return logits.tape->push(Tensor<T>::scalar(acc / static_cast<T>(rows)), {logits},
                             [logits, probs, tgt, rows, cols](Tape<T>& t, std::size_t self) {
                                 const T g = t.grad(self)[0] / static_cast<T>(rows);
                                 auto gz = t.grad_span(logits.id);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                     T mass = 0;
                                     for (std::size_t c = 0; c < cols; ++c) mass += tgt->data[r * cols + c];
                                     for (std::size_t c = 0; c < cols; ++c) {
                                         const std::size_t i = r * cols + c;
                                         gz[i] += g * (probs->data[i] * mass - tgt->data[i]);
                                     }
                                 }
                             });
}

#define DYTOX_INSTANTIATE(T)                                                                           \
    template class Tape<T>;                                                                            \
    template Var<T> matmul(Var<T>, Var<T>);                                                            \
    template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                     \
    template Var<T> add(Var<T>, Var<T>);                                                               \
    template Var<T> add_tiled(Var<T>, Var<T>);                                                         \
    template Var<T> sub(Var<T>, Var<T>);                                                               \
    template Var<T> mul(Var<T>, Var<T>);                                                               \
    template Var<T> scale(Var<T>, T);                                                                  \
    template Var<T> sum(Var<T>);                                                                       \
    template Var<T> mean(Var<T>);                                                                      \
    template Var<T> sigmoid(Var<T>);                                                                   \
    template Var<T> gelu(Var<T>);                                                                      \
    template Var<T> softmax(Var<T>, std::size_t);                                                      \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                             \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                                           \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                      \
    template Var<T> prepend_row(Var<T>, Var<T>, std::size_t);                                          \
    template Var<T> strided_rows(Var<T>, std::size_t, std::size_t);                                    \
    template Var<T> repeat_rows(Var<T>, std::size_t);                                                  \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, Tensor<T>*);           \
    template Var<T> binary_cross_entropy(Var<T>, const Tensor<T>&, T);                                 \
    template Var<T> softmax_cross_entropy(Var<T>, const Tensor<T>&);

DYTOX_INSTANTIATE(float)
DYTOX_INSTANTIATE(double)

#undef DYTOX_INSTANTIATE

}  // namespace dytox
