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

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dytox/autodiff.hpp"

namespace dytox {

/// Adam moments keyed by parameter name.
template <typename T>
struct AdamState {
    struct Moments {
        Tensor<T> first;
        Tensor<T> second;
    };

    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::map<std::string, Moments> moments;
};

/// One bias-corrected Adam update over `params`. Parameters that do not
/// require grad are left untouched (value and moments). The step counter
/// advances once per call.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr);

enum class DecayKind { cosine, constant };

/// Linear warmup over the first `warmup_epochs` epochs, then decay.
struct LrSchedule {
    double base_lr = 5e-4;
    std::size_t warmup_epochs = 5;
    std::size_t total_epochs = 500;
    DecayKind decay = DecayKind::cosine;

    double at(std::size_t epoch) const;
};

/// Worst relative error between the tape gradient of `f` with respect to
/// `theta` and central finite differences of step `h`. The denominator is
/// max(|analytic|, |numeric|, 1e-8). `f` builds the scalar on the given tape
/// from the current parameter values. At most `max_coords` coordinates
/// (evenly strided) are probed; 0 means all.
double grad_check(const std::function<Var<double>(Tape<double>&)>& f, Parameter<double>& theta, double h = 1e-5,
                  std::size_t max_coords = 0);

}  // namespace dytox
