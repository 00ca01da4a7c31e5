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

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dytox/checkpoint.hpp"
#include "dytox/experiment.hpp"
#include "dytox/metrics.hpp"
#include "dytox/training.hpp"

namespace {

using nlohmann::json;

json load_config_json(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw dytox::ConfigError("cannot open config " + path);
    json j = json::parse(in);
    for (const auto& o : overrides) dytox::apply_override(j, o);
    return j;
}

json inspect_json(const dytox::DyToxModel<float>& model) {
    const auto p = dytox::count_params(model);
    const auto o = dytox::overhead_report(model);
    const auto f = dytox::count_flops(model);
    json counts = json::array();
    for (std::size_t n : model.class_counts()) counts.push_back(n);
    return json{{"tasks", model.num_tasks()},
                {"class_counts", counts},
                {"params",
                 {{"tokenizer", p.tokenizer},
                  {"sabs", p.sabs},
                  {"tab", p.tab},
                  {"tokens", p.tokens},
                  {"heads", p.heads},
                  {"total", p.total()},
                  {"token_delta", o.token_delta},
                  {"token_ratio", o.token_ratio}}},
                {"flops",
                 {{"tokenizer", f.tokenizer},
                  {"sab_total", f.sab_total},
                  {"tab_per_task", f.tab_per_task},
                  {"total", f.total(model.num_tasks())},
                  {"tab_ratio", o.flop_ratio}}}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual learning with a dynamic task-token transformer"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Run a class-incremental experiment");
    run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* seed_opt = run->add_option("--seed", seed, "Global seed");
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--override", overrides, "Config override key.path=value (repeatable)");
    run->add_flag("--quiet", quiet, "No progress output");

    std::string ckpt_path;
    std::string eval_config;
    std::vector<std::string> eval_overrides;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split of a config's scenario");
    eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", eval_config, "Experiment config naming the dataset and scenario")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--override", eval_overrides, "Config override key.path=value (repeatable)");

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "Print parameter and FLOP counts of a checkpoint");
    inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            json j = load_config_json(config_path, overrides);
            if (seed_opt->count() > 0) j["seed"] = seed;
            if (!out_dir.empty()) j["output_dir"] = out_dir;
            const auto config = dytox::parse_config(j);
            const auto result = dytox::run_experiment(config, quiet ? nullptr : &std::cerr);
            std::cout << dytox::metrics_json(result).dump(2) << "\n";
        } else if (eval->parsed()) {
            const auto config = dytox::parse_config(load_config_json(eval_config, eval_overrides));
            const auto ckpt = dytox::load_checkpoint(ckpt_path);
            const auto data = dytox::load_datasets(config.dataset);
            const auto scenario = dytox::build_scenario(data.train, config.num_steps, config.class_order_seed);
            const auto& model = ckpt.model;
            const auto counts = scenario.class_counts();
            if (model.num_tasks() > scenario.num_tasks()) {
                throw std::invalid_argument("checkpoint has more tasks than the config's scenario");
            }
            for (std::size_t t = 0; t < model.num_tasks(); ++t) {
                if (model.class_counts()[t] != counts[t]) {
                    throw std::invalid_argument("checkpoint class counts do not match the config's scenario");
                }
            }
            const std::size_t step = model.num_tasks() - 1;
            dytox::AccuracyMatrix m(model.num_tasks());
            dytox::evaluate_step(model, data.test, scenario, step, m);
            json per_task = json::array();
            for (std::size_t t = 0; t <= step; ++t) per_task.push_back(m.at(step, t));
            std::cout << json{{"tasks", model.num_tasks()}, {"pooled_accuracy", m.pooled(step)}, {"per_task", per_task}}
                             .dump(2)
                      << "\n";
        } else if (inspect->parsed()) {
            std::cout << inspect_json(dytox::load_checkpoint(inspect_path).model).dump(2) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "dytox: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
