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

#include "dytox/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace dytox {

namespace {

constexpr char kMagic[4] = {'D', 'Y', 'T', 'X'};

class Writer {
   public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::vector<char>& bytes() const { return bytes_; }

   private:
    std::vector<char> bytes_;
};

class Reader {
   public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }

   private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

bool stored(const std::string& name) { return name.rfind("divergence.", 0) != 0; }

}  // namespace

void save_checkpoint(const DyToxModel<float>& model, const std::filesystem::path& path, const Rng* rng) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kCheckpointVersion);
    const auto& c = model.config();
    for (std::size_t v : {c.image_size, c.channels, c.patch_size, c.embed_dim, c.heads, c.sab_count, c.mlp_ratio}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u8(c.token_expansion ? 1 : 0);
    w.u8(c.independent_heads ? 1 : 0);
    w.f64(c.init_std);
    w.f64(c.norm_eps);
    w.u32(static_cast<std::uint32_t>(model.num_tasks()));
    for (std::size_t n : model.class_counts()) w.u32(static_cast<std::uint32_t>(n));
    std::string state;
    if (rng != nullptr) {
        std::ostringstream os;
        os << *rng;
        state = os.str();
    }
    w.str(state);

    std::vector<const Parameter<float>*> params;
    for (const auto* p : model.parameters())
        if (stored(p->name)) params.push_back(p);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.shape.size()));
        for (std::size_t e : p->value.shape) w.u64(e);
        for (float v : p->value.data) w.f32(v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));

    char magic[4];
    for (char& ch : magic) ch = static_cast<char>(r.u8());
    if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("not a DYTX checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    ModelConfig c;
    c.image_size = r.u32();
    c.channels = r.u32();
    c.patch_size = r.u32();
    c.embed_dim = r.u32();
    c.heads = r.u32();
    c.sab_count = r.u32();
    c.mlp_ratio = r.u32();
    c.token_expansion = r.u8() != 0;
    c.independent_heads = r.u8() != 0;
    c.init_std = r.f64();
    c.norm_eps = r.f64();
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }
    const std::uint32_t tasks = r.u32();
    std::vector<std::size_t> counts(tasks);
    for (auto& n : counts) {
        n = r.u32();
        if (n == 0) throw FormatError("checkpoint lists a task with no classes");
    }
    const std::string state = r.str();

    Rng build_rng(0);
    DyToxModel<float> model(c, build_rng);
    for (std::size_t n : counts) model.expand_task(n, build_rng);
    model.drop_divergence_head();

    std::map<std::string, Parameter<float>*> table;
    for (auto* p : model.parameters()) table[p->name] = p;
    const std::uint32_t count = r.u32();
    std::map<std::string, bool> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        auto it = table.find(name);
        if (it == table.end()) throw FormatError("checkpoint has unknown tensor '" + name + "'");
        if (seen[name]) throw FormatError("checkpoint repeats tensor '" + name + "'");
        seen[name] = true;
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& e : shape) e = r.u64();
        auto& value = it->second->value;
        if (shape != value.shape) {
            throw FormatError("tensor '" + name + "' has shape " + to_string(shape) + ", model expects " +
                              to_string(value.shape));
        }
        r.need(value.size() * 4);
        for (auto& v : value.data) v = r.f32();
    }
    if (seen.size() != table.size()) {
        for (const auto& [name, p] : table)
            if (!seen.count(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    if (!r.done()) throw FormatError("checkpoint has trailing bytes");

    std::optional<Rng> rng;
    if (!state.empty()) {
        std::istringstream is(state);
        Rng restored;
        is >> restored;
        if (!is) throw FormatError("checkpoint RNG state is malformed");
        rng = restored;
    }
    return Checkpoint{std::move(model), rng};
}

}  // namespace dytox
