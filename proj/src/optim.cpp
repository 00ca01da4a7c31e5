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

#include "dytox/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dytox {

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr) {
    if (lr < 0) throw std::invalid_argument("adam_step: negative learning rate");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(state.eps);

    for (Parameter<T>* p : params) {
        if (!p->requires_grad) continue;
        if (p->grad.empty()) continue;  // never reached by a loss
        if (p->grad.shape != p->value.shape) {
            throw std::invalid_argument("adam_step: grad shape " + to_string(p->grad.shape) + " does not match " +
                                        p->name + " " + to_string(p->value.shape));
        }
        auto [it, fresh] = state.moments.try_emplace(p->name);
        auto& m = it->second;
        if (fresh) {
            m.first = Tensor<T>(p->value.shape);
            m.second = Tensor<T>(p->value.shape);
        } else if (m.first.shape != p->value.shape) {
            throw std::invalid_argument("adam_step: moment shape mismatch for " + p->name);
        }
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T g = p->grad[i];
            m.first[i] = b1 * m.first[i] + (T(1) - b1) * g;
            m.second[i] = b2 * m.second[i] + (T(1) - b2) * g * g;
            const T denom = std::sqrt(m.second[i]) * inv_sqrt_bc2 + eps;
            p->value[i] -= step_size * m.first[i] / denom;
        }
    }
}

double LrSchedule::at(std::size_t epoch) const {
    if (epoch < warmup_epochs) {
        return base_lr * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
    }
    if (decay == DecayKind::constant || total_epochs <= warmup_epochs) return base_lr;
    const double progress = static_cast<double>(epoch - warmup_epochs) / static_cast<double>(total_epochs - warmup_epochs);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double grad_check(const std::function<Var<double>(Tape<double>&)>& f, Parameter<double>& theta, double h,
                  std::size_t max_coords) {
    theta.zero_grad();
    {
        Tape<double> tape(true);
        tape.backward(f(tape));
    }
    const Tensor<double> analytic = theta.grad;
    const std::size_t n = theta.value.size();
    const std::size_t stride = (max_coords == 0 || max_coords >= n) ? 1 : (n + max_coords - 1) / max_coords;

    auto eval = [&] {
        Tape<double> tape(false);
        return f(tape).item();
    };
    double worst = 0;
    for (std::size_t i = 0; i < n; i += stride) {
        const double saved = theta.value[i];
        theta.value[i] = saved + h;
        const double up = eval();
        theta.value[i] = saved - h;
        const double down = eval();
        theta.value[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

template void adam_step(const std::vector<Parameter<float>*>&, AdamState<float>&, double);
template void adam_step(const std::vector<Parameter<double>*>&, AdamState<double>&, double);

}  // namespace dytox
