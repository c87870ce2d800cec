// Command-line front end: simulate | train | sample | evaluate | benchmark.
// Exit codes: 0 success, 2 configuration error, 3 training divergence.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sbicm/harness.hpp"

namespace fs = std::filesystem;
using namespace sbicm;

namespace {

json load_json_file(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse " + path + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed_override) {
    json j = load_json_file(path);
    if (seed_override) j["seed"] = *seed_override;
    return config_from_json(j);
}

ObservationSet parse_x_obs(const std::string& text, std::size_t n_obs, std::size_t obs_dim) {
    std::vector<double> values;
    std::istringstream ss(text);
    std::string field;
    while (std::getline(ss, field, ',')) values.push_back(std::strtod(field.c_str(), nullptr));
    if (values.size() != n_obs * obs_dim) {
        throw ConfigError("--x-obs needs " + std::to_string(n_obs * obs_dim) + " comma-separated values");
    }
    ObservationSet x;
    x.values = Matrix(n_obs, obs_dim);
    x.values.values = std::move(values);
    return x;
}

struct ModelShape {
    std::size_t n_obs;
    std::size_t obs_dim;
};

ModelShape checkpoint_shape(const fs::path& checkpoint) {
    const json j = load_checkpoint(checkpoint);
    return {j.at("n_obs").get<std::size_t>(), j.at("obs_dim").get<std::size_t>()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Amortized posterior estimation with consistency models and a flow-matching baseline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, x_obs_text, dataset_path, task_name = "two_moons",
                                                                             model_kind_name = "cmpe";
    std::optional<std::uint64_t> seed;
    std::size_t budget = 1024, k_steps = 10, n_draws = 4000, instance_index = 0;
    bool force = false, density = false, dry_run = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config JSON");
        sub->add_option("--seed", seed, "overrides the config seed");
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_flag("--force", force, "overwrite existing outputs");
    };

    CLI::App* sim = app.add_subcommand("simulate", "generate an offline training set");
    add_common(sim);
    sim->add_option("--task", task_name, "gmm | two_moons | inverse_kinematics");
    sim->add_option("--budget", budget, "number of simulations M");

    CLI::App* train = app.add_subcommand("train", "train a model to completion");
    add_common(train);
    train->add_option("--data", dataset_path, "dataset CSV (defaults to regenerating from the config)");

    CLI::App* sample = app.add_subcommand("sample", "draw from a trained model");
    add_common(sample);
    sample->add_option("--checkpoint", checkpoint, "model checkpoint JSON")->required();
    sample->add_option("--x-obs", x_obs_text, "flattened observation values, comma separated");
    sample->add_option("--dataset", dataset_path, "dataset CSV to take the observation from");
    sample->add_option("--index", instance_index, "record index into --dataset");
    sample->add_option("--k-steps", k_steps, "number of sampling steps");
    sample->add_option("--n-draws", n_draws, "number of posterior draws");
    sample->add_flag("--density", density, "single-step sampling with log-density (cmpe only)");

    CLI::App* evaluate = app.add_subcommand("evaluate", "run the metric suite against reference posteriors");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "model checkpoint JSON")->required();
    std::string ref_cache;
    evaluate->add_option("--ref-cache", ref_cache, "shared reference-posterior cache directory");

    CLI::App* bench = app.add_subcommand("benchmark", "full simulate/train/sample/evaluate sweep");
    add_common(bench);
    bench->add_flag("--dry-run", dry_run, "list planned cells without executing");

    CLI::App* show = app.add_subcommand("config", "print the default config for a task/model");
    show->add_option("--task", task_name, "gmm | two_moons | inverse_kinematics");
    show->add_option("--model-kind", model_kind_name, "cmpe | fmpe");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) {
            Task task = task_from_string(task_name);
            std::uint64_t sim_seed = seed.value_or(1);
            if (!config_path.empty()) {
                const ExperimentConfig cfg = load_config(config_path, seed);
                task = cfg.task;
                if (sim->count("--budget") == 0) budget = cfg.budget;
                sim_seed = cfg.seed;
            }
            const SimulateOutput out = run_simulate(task, budget, sim_seed, out_dir, force);
            std::cout << "wrote " << out.csv.string() << "\n";
        } else if (train->parsed()) {
            if (config_path.empty()) throw ConfigError("train: --config is required");
            const ExperimentConfig cfg = load_config(config_path, seed);
            std::optional<fs::path> data;
            if (!dataset_path.empty()) data = dataset_path;
            const TrainOutput out = run_train(cfg, out_dir, force, data);
            std::cout << "wrote " << out.checkpoint.string() << " (train_s = " << out.train_seconds
                      << ", final loss = " << out.final_loss << ")\n";
        } else if (sample->parsed()) {
            const ModelShape shape = checkpoint_shape(checkpoint);
            ObservationSet x_obs;
            if (!x_obs_text.empty()) {
                x_obs = parse_x_obs(x_obs_text, shape.n_obs, shape.obs_dim);
            } else if (!dataset_path.empty()) {
                const TrainingSet set = read_dataset(dataset_path);
                if (instance_index >= set.records.size()) throw ConfigError("sample: --index out of range");
                x_obs = set.records[instance_index].x;
            } else {
                throw ConfigError("sample: provide --x-obs or --dataset/--index");
            }
            const SampleOutput out =
                run_sample(checkpoint, x_obs, k_steps, n_draws, seed.value_or(1), out_dir, force, density);
            std::cout << "wrote " << out.draws_csv.string() << " (" << out.ms_per_1k << " ms per 1000 draws)\n";
        } else if (evaluate->parsed()) {
            if (config_path.empty()) throw ConfigError("evaluate: --config is required");
            const ExperimentConfig cfg = load_config(config_path, seed);
            std::optional<fs::path> cache;
            if (!ref_cache.empty()) cache = ref_cache;
            const EvaluateOutput out = run_evaluate(cfg, checkpoint, out_dir, force, cache);
            std::cout << "wrote " << out.aggregate_json.string() << "\n";
        } else if (bench->parsed()) {
            if (config_path.empty()) throw ConfigError("benchmark: --config is required");
            json j = load_json_file(config_path);
            if (seed) j["seed"] = *seed;
            const BenchmarkSuite suite = suite_from_json(j);
            const BenchmarkOutput out = run_benchmark(suite, out_dir, dry_run);
            if (dry_run) {
                std::cout << "dry run: " << out.cells_total << " cells planned\n";
            } else {
                std::cout << "wrote " << out.results_csv.string() << " (" << out.cells_run << " run, "
                          << out.cells_skipped << " cached)\n";
            }
        } else if (show->parsed()) {
            const ExperimentConfig cfg = default_config(task_from_string(task_name), model_kind_from_string(model_kind_name));
            std::cout << config_to_json(cfg).dump(2) << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
