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

#include "dytox/experiment.hpp"

#include <chrono>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <type_traits>

#include "dytox/checkpoint.hpp"
#include "dytox/memory.hpp"

namespace dytox {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(join(path, key) + ": unknown key");
    }
}

void read(const json& j, const std::string& path, const char* key, bool& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_boolean()) throw ConfigError(join(path, key) + ": expected a boolean");
    out = v.get<bool>();
}

void read(const json& j, const std::string& path, const char* key, double& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(join(path, key) + ": expected a number");
    out = v.get<double>();
}

template <typename U>
    requires std::is_unsigned_v<U> && (!std::is_same_v<U, bool>)
void read(const json& j, const std::string& path, const char* key, U& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(join(path, key) + ": expected a non-negative integer");
    }
    out = v.get<U>();
}

void read(const json& j, const std::string& path, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_string()) throw ConfigError(join(path, key) + ": expected a string");
    out = v.get<std::string>();
}

void rethrow_with_key(const std::string& key, const std::exception& e) { throw ConfigError(key + ": " + e.what()); }

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset.kind != "synthetic" && dataset.kind != "cifar100") {
        throw ConfigError("dataset.kind: expected \"synthetic\" or \"cifar100\"");
    }
    std::size_t classes = 100;
    std::size_t image = 32;
    std::size_t channels = 3;
    if (dataset.kind == "synthetic") {
        try {
            dataset.synthetic.validate();
        } catch (const std::invalid_argument& e) {
            rethrow_with_key("dataset.synthetic", e);
        }
        if (dataset.synthetic.samples_per_class == 0) throw ConfigError("dataset.synthetic.samples_per_class: must be positive");
        if (dataset.synthetic.test_samples_per_class == 0) {
            throw ConfigError("dataset.synthetic.test_samples_per_class: must be positive");
        }
        classes = dataset.synthetic.num_classes;
        image = dataset.synthetic.image_size;
        channels = dataset.synthetic.channels;
    } else {
        if (dataset.cifar_train.empty()) throw ConfigError("dataset.cifar_train: path required for cifar100");
        if (dataset.cifar_test.empty()) throw ConfigError("dataset.cifar_test: path required for cifar100");
    }
    try {
        model.validate();
    } catch (const std::invalid_argument& e) {
        rethrow_with_key("model", e);
    }
    if (model.image_size != image) throw ConfigError("model.image_size: does not match the dataset image size");
    if (model.channels != channels) throw ConfigError("model.channels: does not match the dataset channels");
    try {
        schedule.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (schedule.warmup_epochs > schedule.epochs_per_task) {
        throw ConfigError("schedule.warmup_epochs: exceeds schedule.epochs_per_task");
    }
    if (num_steps == 0 || classes % num_steps != 0) {
        throw ConfigError("scenario.num_steps: " + std::to_string(classes) + " classes cannot be split into " +
                          std::to_string(num_steps) + " equal tasks");
    }
    if (!(lambda_div >= 0)) throw ConfigError("lambda_div: must be non-negative");
    if (!(mixup_alpha > 0)) throw ConfigError("mixup_alpha: must be positive");
    if (!(kd_temperature > 0)) throw ConfigError("kd_temperature: must be positive");
    if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    check_keys(j, "", {"dataset", "model", "schedule", "scenario", "memory_budget", "lambda_div", "mixup_alpha", "kd_mode",
                       "kd_temperature", "toggles", "seed", "output_dir", "save_checkpoint"});
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, "dataset", {"kind", "synthetic", "cifar_train", "cifar_test"});
        read(d, "dataset", "kind", c.dataset.kind);
        read(d, "dataset", "cifar_train", c.dataset.cifar_train);
        read(d, "dataset", "cifar_test", c.dataset.cifar_test);
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            const std::string p = "dataset.synthetic";
            check_keys(s, p, {"num_classes", "image_size", "channels", "pattern_cells", "contrast", "noise_std",
                              "samples_per_class", "test_samples_per_class", "seed"});
            auto& sc = c.dataset.synthetic;
            read(s, p, "num_classes", sc.num_classes);
            read(s, p, "image_size", sc.image_size);
            read(s, p, "channels", sc.channels);
            read(s, p, "pattern_cells", sc.pattern_cells);
            read(s, p, "contrast", sc.contrast);
            read(s, p, "noise_std", sc.noise_std);
            read(s, p, "samples_per_class", sc.samples_per_class);
            read(s, p, "test_samples_per_class", sc.test_samples_per_class);
            read(s, p, "seed", sc.seed);
        }
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, "model", {"image_size", "channels", "patch_size", "embed_dim", "heads", "sab_count", "mlp_ratio",
                                "init_std", "norm_eps"});
        read(m, "model", "image_size", c.model.image_size);
        read(m, "model", "channels", c.model.channels);
        read(m, "model", "patch_size", c.model.patch_size);
        read(m, "model", "embed_dim", c.model.embed_dim);
        read(m, "model", "heads", c.model.heads);
        read(m, "model", "sab_count", c.model.sab_count);
        read(m, "model", "mlp_ratio", c.model.mlp_ratio);
        read(m, "model", "init_std", c.model.init_std);
        read(m, "model", "norm_eps", c.model.norm_eps);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        check_keys(s, "schedule", {"epochs_per_task", "warmup_epochs", "base_lr", "finetune_epochs", "finetune_lr",
                                   "batch_size"});
        read(s, "schedule", "epochs_per_task", c.schedule.epochs_per_task);
        read(s, "schedule", "warmup_epochs", c.schedule.warmup_epochs);
        read(s, "schedule", "base_lr", c.schedule.base_lr);
        read(s, "schedule", "finetune_epochs", c.schedule.finetune_epochs);
        read(s, "schedule", "finetune_lr", c.schedule.finetune_lr);
        read(s, "schedule", "batch_size", c.schedule.batch_size);
    }
    if (j.contains("scenario")) {
        const auto& s = j.at("scenario");
        check_keys(s, "scenario", {"num_steps", "class_order_seed"});
        read(s, "scenario", "num_steps", c.num_steps);
        read(s, "scenario", "class_order_seed", c.class_order_seed);
    }
    read(j, "", "memory_budget", c.memory_budget);
    read(j, "", "lambda_div", c.lambda_div);
    read(j, "", "mixup_alpha", c.mixup_alpha);
    read(j, "", "kd_temperature", c.kd_temperature);
    if (j.contains("kd_mode")) {
        std::string mode;
        read(j, "", "kd_mode", mode);
        if (mode == "bce") {
            c.kd_mode = KdMode::bce;
        } else if (mode == "softmax") {
            c.kd_mode = KdMode::softmax;
        } else {
            throw ConfigError("kd_mode: expected \"bce\" or \"softmax\"");
        }
    }
    if (j.contains("toggles")) {
        const auto& t = j.at("toggles");
        check_keys(t, "toggles", {"mixup", "kd", "divergence", "independent_heads", "token_expansion", "balanced_finetune"});
        read(t, "toggles", "mixup", c.toggles.mixup);
        read(t, "toggles", "kd", c.toggles.kd);
        read(t, "toggles", "divergence", c.toggles.divergence);
        read(t, "toggles", "independent_heads", c.toggles.independent_heads);
        read(t, "toggles", "token_expansion", c.toggles.token_expansion);
        read(t, "toggles", "balanced_finetune", c.toggles.balanced_finetune);
    }
    read(j, "", "seed", c.seed);
    read(j, "", "output_dir", c.output_dir);
    read(j, "", "save_checkpoint", c.save_checkpoint);
    c.model.token_expansion = c.toggles.token_expansion;
    c.model.independent_heads = c.toggles.independent_heads;
    c.schedule.seed = c.seed;
    c.validate();
    return c;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
    const auto& s = c.dataset.synthetic;
    return json{
        {"dataset",
         {{"kind", c.dataset.kind},
          {"cifar_train", c.dataset.cifar_train},
          {"cifar_test", c.dataset.cifar_test},
          {"synthetic",
           {{"num_classes", s.num_classes},
            {"image_size", s.image_size},
            {"channels", s.channels},
            {"pattern_cells", s.pattern_cells},
            {"contrast", s.contrast},
            {"noise_std", s.noise_std},
            {"samples_per_class", s.samples_per_class},
            {"test_samples_per_class", s.test_samples_per_class},
            {"seed", s.seed}}}}},
        {"model",
         {{"image_size", c.model.image_size},
          {"channels", c.model.channels},
          {"patch_size", c.model.patch_size},
          {"embed_dim", c.model.embed_dim},
          {"heads", c.model.heads},
          {"sab_count", c.model.sab_count},
          {"mlp_ratio", c.model.mlp_ratio},
          {"init_std", c.model.init_std},
          {"norm_eps", c.model.norm_eps}}},
        {"schedule",
         {{"epochs_per_task", c.schedule.epochs_per_task},
          {"warmup_epochs", c.schedule.warmup_epochs},
          {"base_lr", c.schedule.base_lr},
          {"finetune_epochs", c.schedule.finetune_epochs},
          {"finetune_lr", c.schedule.finetune_lr},
          {"batch_size", c.schedule.batch_size}}},
        {"scenario", {{"num_steps", c.num_steps}, {"class_order_seed", c.class_order_seed}}},
        {"memory_budget", c.memory_budget},
        {"lambda_div", c.lambda_div},
        {"mixup_alpha", c.mixup_alpha},
        {"kd_mode", c.kd_mode == KdMode::bce ? "bce" : "softmax"},
        {"kd_temperature", c.kd_temperature},
        {"toggles",
         {{"mixup", c.toggles.mixup},
          {"kd", c.toggles.kd},
          {"divergence", c.toggles.divergence},
          {"independent_heads", c.toggles.independent_heads},
          {"token_expansion", c.toggles.token_expansion},
          {"balanced_finetune", c.toggles.balanced_finetune}}},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"save_checkpoint", c.save_checkpoint},
    };
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
        if (!node->is_object()) {
            if (!node->is_null()) throw ConfigError("override '" + path + "': " + key + " is not inside an object");
            *node = json::object();
        }
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

Datasets load_datasets(const DatasetSpec& spec) {
    Datasets d;
    if (spec.kind == "synthetic") {
        d.train = gen_synthetic(spec.synthetic, Split::train);
        d.test = gen_synthetic(spec.synthetic, Split::test);
    } else {
        d.train = load_cifar100_binary(spec.cifar_train);
        d.test = load_cifar100_binary(spec.cifar_test);
    }
    d.train.validate();
    d.test.validate();
    return d;
}

MetricsReport summarize(const AccuracyMatrix& matrix) {
    MetricsReport r;
    const std::size_t done = matrix.completed_steps();
    r.tasks = done;
    if (done == 0) return r;
    const auto m = matrix.prefix(done);
    for (std::size_t k = 0; k < done; ++k) r.pooled.push_back(m.pooled(k));
    r.avg_acc = avg_accuracy(m);
    r.last_acc = last_accuracy(m);
    if (done >= 2) r.forgetting = forgetting(m);
    return r;
}

json metrics_json(const ExperimentResult& result) {
    const auto& r = result.report;
    json steps = json::array();
    for (const auto& s : result.steps) {
        steps.push_back({{"step", s.step},
                         {"classes_seen", s.classes_seen},
                         {"alpha", s.alpha},
                         {"params_total", s.params_total},
                         {"tokens", s.tokens},
                         {"heads", s.heads},
                         {"used_kd", s.used_kd},
                         {"used_divergence", s.used_divergence},
                         {"used_mixup", s.used_mixup},
                         {"finetuned", s.finetuned},
                         {"train_steps", s.train_steps},
                         {"final_loss", s.final_loss},
                         {"final_clf", s.final_clf},
                         {"final_kd", s.final_kd},
                         {"final_div", s.final_div},
                         {"memory_size", s.memory_size},
                         {"pooled_accuracy", s.pooled_accuracy}});
    }
    json matrix = json::array();
    for (std::size_t k = 0; k < result.matrix.tasks(); ++k) {
        json row = json::array();
        for (std::size_t j = 0; j <= k; ++j) {
            if (result.matrix.populated(k, j)) row.push_back(result.matrix.at(k, j));
        }
        if (!row.empty()) matrix.push_back(row);
    }
    const auto& o = r.overhead;
    return json{{"tasks", r.tasks},
                {"avg_acc", r.avg_acc},
                {"last_acc", r.last_acc},
                {"forgetting", r.forgetting ? json(*r.forgetting) : json(nullptr)},
                {"pooled", r.pooled},
                {"memory_size", r.memory_size},
                {"max_memory_size", r.max_memory_size},
                {"accuracy_matrix", matrix},
                {"overhead",
                 {{"params_total", o.params_total},
                  {"token_delta", o.token_delta},
                  {"task_delta", o.task_delta},
                  {"token_ratio", o.token_ratio},
                  {"flops_total", o.flops_total},
                  {"flops_per_task", o.flops_per_task},
                  {"flop_ratio", o.flop_ratio}}},
                {"steps", steps}};
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void emit_metrics(const ExperimentResult& result, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "metrics.json", metrics_json(result).dump(2) + "\n");

    std::ostringstream matrix;
    matrix << "step,task,accuracy\n";
    matrix.precision(17);
    for (std::size_t k = 0; k < result.matrix.tasks(); ++k)
        for (std::size_t j = 0; j <= k; ++j)
            if (result.matrix.populated(k, j)) matrix << k + 1 << ',' << j + 1 << ',' << result.matrix.at(k, j) << '\n';
    write_text(dir / "accuracy_matrix.csv", matrix.str());

    std::ostringstream curve;
    curve << "step,pooled_accuracy\n";
    curve.precision(17);
    for (std::size_t k = 0; k < result.report.pooled.size(); ++k) curve << k + 1 << ',' << result.report.pooled[k] << '\n';
    write_text(dir / "curve.csv", curve.str());

    const auto& o = result.report.overhead;
    const json timings{{"train_seconds", result.train_seconds},
                       {"epoch_seconds", result.epoch_seconds},
                       {"forward_seconds", o.forward_seconds},
                       {"forward_time_ratio", o.time_ratio}};
    write_text(dir / "timings.json", timings.dump(2) + "\n");
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
    config.validate();
    const auto data = load_datasets(config.dataset);
    const auto scenario = build_scenario(data.train, config.num_steps, config.class_order_seed);
    const std::filesystem::path out_dir = config.output_dir;
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.json", to_json(config).dump(2) + "\n");

    Rng rng(config.seed);
    ModelConfig mc = config.model;
    mc.token_expansion = config.toggles.token_expansion;
    mc.independent_heads = config.toggles.independent_heads;
    DyToxModel<float> model(mc, rng);

    TrainOptions options;
    options.mixup = config.toggles.mixup;
    options.mixup_alpha = config.mixup_alpha;
    options.kd = config.toggles.kd;
    options.kd_mode = config.kd_mode;
    options.kd_temperature = config.kd_temperature;
    options.divergence = config.toggles.divergence;
    options.lambda_div = config.lambda_div;
    options.balanced_finetune = config.toggles.balanced_finetune;
    TrainSchedule schedule = config.schedule;
    schedule.seed = config.seed;

    RehearsalMemory memory;
    memory.budget = config.memory_budget;

    ExperimentResult result;
    result.matrix = AccuracyMatrix(scenario.num_tasks());
    std::size_t max_memory = 0;
    const auto probe_idx = scenario.indices_for(data.test, 0);
    const std::vector<std::size_t> probe_take(probe_idx.begin(),
                                              probe_idx.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(32, probe_idx.size())));
    const auto probe = gather_images<float>(data.test, probe_take);

    for (std::size_t t = 0; t < scenario.num_tasks(); ++t) {
        using clock = std::chrono::steady_clock;
        const auto start = clock::now();
        std::optional<DyToxModel<float>> teacher;
        if (t > 0 && options.kd) teacher = model;
        model.expand_task(scenario.task_classes[t].size(), rng);

        auto trained = train_task(model, data.train, scenario, t, memory, teacher ? &*teacher : nullptr, schedule, options);
        memory_update(memory, data.train, scenario, model, t);
        max_memory = std::max(max_memory, memory.size());
        evaluate_step(model, data.test, scenario, t, result.matrix);
        const double seconds = std::chrono::duration<double>(clock::now() - start).count();

        StepSummary s;
        s.step = t + 1;
        s.classes_seen = model.num_classes();
        s.alpha = alpha_schedule(model.class_counts(), t + 1);
        s.params_total = count_params(model).total();
        s.tokens = model.tokens.size();
        s.heads = model.config().independent_heads ? model.heads.size() : 1;
        s.used_kd = trained.used_kd;
        s.used_divergence = trained.used_divergence;
        s.used_mixup = options.mixup;
        s.finetuned = trained.finetuned;
        s.train_steps = trained.steps;
        std::size_t main_epochs = 0;
        for (const auto& e : trained.epochs) {
            if (e.phase != Phase::main) continue;
            ++main_epochs;
            s.final_loss = e.loss;
            s.final_clf = e.clf;
            s.final_kd = e.kd;
            s.final_div = e.div;
        }
        s.memory_size = memory.size();
        s.pooled_accuracy = result.matrix.pooled(t);
        result.steps.push_back(s);
        result.train_seconds.push_back(seconds);
        result.epoch_seconds.push_back(main_epochs ? seconds / static_cast<double>(main_epochs) : 0.0);

        const auto overhead = overhead_report(model, &probe);
        result.report = summarize(result.matrix);
        result.report.overhead = overhead;
        result.report.memory_size = memory.size();
        result.report.max_memory_size = max_memory;
        emit_metrics(result, out_dir);
        if (log != nullptr) {
            *log << "step " << t + 1 << "/" << scenario.num_tasks() << "  classes " << s.classes_seen << "  loss "
                 << s.final_loss << "  pooled acc " << s.pooled_accuracy << "  memory " << s.memory_size << "  "
                 << seconds << " s" << std::endl;
        }
    }
    if (config.save_checkpoint) save_checkpoint(model, out_dir / "model.dytx", &rng);
    result.model = std::move(model);
    return result;
}

}  // namespace dytox
