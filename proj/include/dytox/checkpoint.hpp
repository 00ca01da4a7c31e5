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
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "dytox/model.hpp"

namespace dytox {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    DyToxModel<float> model;
    std::optional<Rng> rng;
};

/// Layout, all little-endian: "DYTX", u32 version, model config, u32 task
/// count and per-task class counts, u32-length-prefixed RNG state text (empty
/// when absent), u32 tensor count, then per tensor: u32-length name, u32 rank,
/// u64 extents, f32 values. The training-only divergence head is not stored.
void save_checkpoint(const DyToxModel<float>& model, const std::filesystem::path& path, const Rng* rng = nullptr);

/// Throws FormatError on a bad magic, version mismatch, truncation, unknown
/// or missing tensors, and shape mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dytox
