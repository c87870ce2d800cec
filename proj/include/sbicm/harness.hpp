#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sbicm/dataset_io.hpp"
#include "sbicm/experiment.hpp"
#include "sbicm/metrics.hpp"
#include "sbicm/reference.hpp"
#include "sbicm/stats.hpp"
#include "sbicm/threads.hpp"

namespace sbicm {

namespace fs = std::filesystem;

inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOutput {
    fs::path csv;
    fs::path meta;
};

inline SimulateOutput run_simulate(Task task, std::size_t budget, std::uint64_t seed, const fs::path& out_dir,
                                   bool force) {
    const std::string stem = dataset_stem(task, budget, seed);
    const fs::path csv = out_dir / (stem + ".csv");
    if (fs::exists(csv) && !force) {
        throw ConfigError("simulate: " + csv.string() + " exists; pass --force to overwrite");
    }
    const TrainingSet set = generate_training_set(task, budget, seed);
    const auto [csv_path, json_path] = write_dataset(out_dir, set);
    return {csv_path, json_path};
}

// ---------------------------------------------------------------------------
// train

using AnyModel = std::variant<ConsistencyModel, FlowMatchModel>;

inline AnyModel build_model(const ExperimentConfig& cfg, const Standardization& stats) {
    const std::uint64_t init_seed = detail::mix_seed(cfg.seed, 0xB0);  // shared across model kinds
    AmortizedNet net = make_amortized_net(cfg.task, cfg.backbone, cfg.use_summary, cfg.summary_dim, stats, init_seed);
    if (cfg.model_kind == ModelKind::cmpe) {
        ConsistencyModel model;
        model.task = cfg.task;
        model.net = std::move(net);
        model.schedule = cfg.schedule;
        return model;
    }
    FlowMatchModel model;
    model.task = cfg.task;
    model.net = std::move(net);
    return model;
}

struct TrainOutput {
    fs::path checkpoint;
    fs::path loss_curve;
    fs::path manifest;
    double train_seconds = 0.0;
    double final_loss = 0.0;
};

inline TrainOutput run_train(const ExperimentConfig& cfg, const fs::path& out_dir, bool force,
                             const std::optional<fs::path>& dataset_csv = std::nullopt) {
    const fs::path checkpoint_path = out_dir / "checkpoint.json";
    const fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(checkpoint_path) && !force) {
        throw ConfigError("train: " + checkpoint_path.string() +
                          " exists; resuming is not supported, pass --force to retrain");
    }

    const TrainingSet set = dataset_csv ? read_dataset(*dataset_csv) : generate_training_set(cfg.task, cfg.budget, cfg.seed);
    if (set.task != cfg.task) throw ConfigError("train: dataset task does not match config");
    if (set.records.size() != cfg.budget) throw ConfigError("train: dataset size does not match budget");

    AnyModel model = build_model(cfg, set.stats);
    TrainingOptions opt;
    opt.epochs = cfg.training.epochs;
    opt.batch_size = cfg.training.batch_size;
    opt.lr0 = cfg.training.lr0;
    opt.seed = detail::mix_seed(cfg.seed, 0x7121);

    TrainResult result;
    json ckpt;
    if (auto* cm = std::get_if<ConsistencyModel>(&model)) {
        result = train_cmpe(*cm, set, opt);
        ckpt = to_json(*cm);
    } else {
        result = train_fmpe(std::get<FlowMatchModel>(model), set, opt);
        ckpt = to_json(std::get<FlowMatchModel>(model));
    }
    save_checkpoint(checkpoint_path, ckpt);

    Matrix curve(result.epoch_losses.size(), 2);
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        curve(e, 0) = static_cast<double>(e);
        curve(e, 1) = result.epoch_losses[e];
    }
    const fs::path curve_path = out_dir / "loss_curve.csv";
    write_csv(curve_path, {"epoch", "loss"}, curve);

    const json cfg_json = config_to_json(cfg);
    json manifest{{"schema_version", kSchemaVersion},
                  {"kind", "train"},
                  {"config", cfg_json},
                  {"content_hash", hex64(fnv1a64(cfg_json.dump()) ^ fnv1a64(std::to_string(set.seed)))},
                  {"train_s", result.train_seconds},
                  {"final_loss", result.epoch_losses.back()},
                  {"artifacts", {{"checkpoint", checkpoint_path.string()}, {"loss_curve", curve_path.string()}}}};
    atomic_write_text(manifest_path, manifest.dump(2) + "\n");
    return {checkpoint_path, curve_path, manifest_path, result.train_seconds, result.epoch_losses.back()};
}

// ---------------------------------------------------------------------------
// sampling helpers

inline AnyModel load_model(const fs::path& checkpoint_path) {
    const json j = load_checkpoint(checkpoint_path);
    if (checkpoint_model_kind(j) == "cmpe") return cmpe_from_json(j);
    return fmpe_from_json(j);
}

inline Matrix sample_any(const AnyModel& model, const ObservationSet& x_obs, std::size_t k_steps, std::size_t n_draws,
                         std::uint64_t seed) {
    if (const auto* cm = std::get_if<ConsistencyModel>(&model)) {
        return multistep_sample(*cm, x_obs, k_steps, n_draws, seed);
    }
    return fmpe_sample(std::get<FlowMatchModel>(model), x_obs, k_steps, n_draws, seed);
}

inline std::size_t trained_s1(const AnyModel& model) {
    if (const auto* cm = std::get_if<ConsistencyModel>(&model)) return cm->schedule.s1;
    return 0;  // no trained step ceiling for fmpe
}

// Median wall-clock milliseconds per 1000 draws over `reps` repetitions;
// model load and file output are excluded by construction.
inline double time_sampling_ms_per_1k(const AnyModel& model, const ObservationSet& x_obs, std::size_t k_steps,
                                      std::uint64_t seed, std::size_t reps = 3, std::size_t n_draws = 1000) {
    std::vector<double> ms(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        const Matrix draws = sample_any(model, x_obs, k_steps, n_draws, seed);
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        ms[r] = sec * 1000.0 * 1000.0 / static_cast<double>(n_draws);
    }
    return median(ms);
}

struct SampleOutput {
    fs::path draws_csv;
    fs::path manifest;
    double ms_per_1k = 0.0;
    bool k_exceeds_trained_steps = false;
};

inline SampleOutput run_sample(const fs::path& checkpoint_path, const ObservationSet& x_obs, std::size_t k_steps,
                               std::size_t n_draws, std::uint64_t seed, const fs::path& out_dir, bool force,
                               bool with_density = false) {
    const fs::path draws_path = out_dir / "draws.csv";
    const fs::path manifest_path = out_dir / "sample_manifest.json";
    if (fs::exists(draws_path) && !force) {
        throw ConfigError("sample: " + draws_path.string() + " exists; pass --force to overwrite");
    }

    const AnyModel model = load_model(checkpoint_path);
    SampleOutput out;
    out.draws_csv = draws_path;
    out.manifest = manifest_path;

    const std::size_t s1 = trained_s1(model);
    if (s1 > 0 && k_steps > s1) {
        out.k_exceeds_trained_steps = true;
        std::cerr << "warning: k_steps = " << k_steps << " exceeds the trained discretization ceiling s1 = " << s1
                  << "; samples may be overconfident\n";
    }

    if (with_density) {
        const auto* cm = std::get_if<ConsistencyModel>(&model);
        if (!cm) throw ConfigError("sample: --density requires a cmpe checkpoint");
        const DensityResult dens = one_step_density(*cm, x_obs, n_draws, seed);
        write_draws_csv(draws_path, dens.draws, &dens.log_density);
    } else {
        const Matrix draws = sample_any(model, x_obs, k_steps, n_draws, seed);
        write_draws_csv(draws_path, draws);
    }
    out.ms_per_1k = time_sampling_ms_per_1k(model, x_obs, k_steps, seed);

    json manifest{{"schema_version", kSchemaVersion},
                  {"kind", "sample"},
                  {"checkpoint", checkpoint_path.string()},
                  {"k_steps", k_steps},
                  {"n_draws", n_draws},
                  {"seed", seed},
                  {"sample_ms_per_1k", out.ms_per_1k},
                  {"k_exceeds_trained_steps", out.k_exceeds_trained_steps},
                  {"with_density", with_density},
                  {"artifacts", {{"draws", draws_path.string()}}}};
    atomic_write_text(manifest_path, manifest.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// reference cache

inline std::string x_obs_cache_key(Task task, const ObservationSet& x_obs, std::size_t n_reference,
                                   const ReferenceSettings& settings) {
    std::string bytes(reinterpret_cast<const char*>(x_obs.values.values.data()),
                      x_obs.values.values.size() * sizeof(double));
    std::ostringstream tag;
    tag << to_string(task) << '|' << n_reference << '|' << settings.gmm_grid_n << '|' << settings.gmm_box << '|'
        << settings.tm_grid_n << '|' << settings.tm_use_abc << '|' << settings.tm_abc_eps << '|' << settings.ik_abc_eps;
    return hex64(fnv1a64(bytes) ^ fnv1a64(tag.str()));
}

// Reference draws for one observation, cached per (task, x_obs hash).
inline Matrix cached_reference(Task task, const ObservationSet& x_obs, std::size_t n_reference, std::uint64_t seed,
                               const ReferenceSettings& settings, const fs::path& cache_dir) {
    const fs::path path = cache_dir / ("ref_" + to_string(task) + "_" + x_obs_cache_key(task, x_obs, n_reference, settings) + ".csv");
    if (fs::exists(path)) {
        Matrix draws = read_reference_csv(path);
        if (draws.rows == n_reference) return draws;
    }
    Rng rng = Rng::from(seed, fnv1a64(x_obs_cache_key(task, x_obs, n_reference, settings)));
    Matrix draws = reference_posterior(task, x_obs, n_reference, rng, settings);
    write_reference_csv(path, draws);
    return draws;
}

// ---------------------------------------------------------------------------
// evaluate

struct InstanceMetrics {
    double rmse = 0.0;
    double mmd = 0.0;
    double c2st = 0.0;
};

struct EvaluateOutput {
    fs::path per_instance_csv;
    fs::path aggregate_json;
    fs::path plot_c2st_vs_k;
    fs::path manifest;
};

// Deterministic unseen test instances shared by every model evaluated under
// the same seed, so per-instance comparisons pair up.
inline std::vector<SimulationRecord> evaluation_instances(Task task, std::uint64_t seed, std::size_t count) {
    std::vector<SimulationRecord> instances;
    instances.reserve(count);
    const std::uint64_t eval_seed = detail::mix_seed(seed, 0xE7A1);
    for (std::size_t j = 0; j < count; ++j) {
        Rng rng = Rng::from(eval_seed, j);
        instances.push_back(simulate_record(task, rng));
    }
    return instances;
}

inline EvaluateOutput run_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint_path, const fs::path& out_dir,
                                   bool force, const std::optional<fs::path>& ref_cache = std::nullopt) {
    const fs::path per_instance_path = out_dir / "per_instance.csv";
    const fs::path aggregate_path = out_dir / "aggregate.json";
    const fs::path plot_k_path = out_dir / "plot_c2st_vs_k.csv";
    const fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path) && !force) {
        throw ConfigError("evaluate: " + manifest_path.string() + " exists; pass --force to overwrite");
    }
    if (cfg.eval.s_draws != cfg.eval.n_reference) {
        throw ConfigError("evaluate: s_draws must equal n_reference (draw-count mismatch)");
    }
    const fs::path cache_dir = ref_cache ? *ref_cache : out_dir / "ref_cache";
    fs::create_directories(cache_dir);
    fs::create_directories(out_dir);

    const AnyModel model = load_model(checkpoint_path);
    const std::size_t n_inst = cfg.eval.test_instances;
    const std::vector<SimulationRecord> instances = evaluation_instances(cfg.task, cfg.seed, n_inst);
    const std::uint64_t eval_seed = detail::mix_seed(cfg.seed, 0xE7A1);

    // References first (serial: ABC/grids parallelize internally).
    std::vector<Matrix> references(n_inst);
    for (std::size_t j = 0; j < n_inst; ++j) {
        references[j] = cached_reference(cfg.task, instances[j].x, cfg.eval.n_reference,
                                         detail::mix_seed(cfg.seed, 0x8EF), cfg.reference, cache_dir);
    }

    std::ostringstream per_instance;
    per_instance << "task,model_kind,budget,k_steps,instance,rmse,mmd,c2st\n";
    json aggregate{{"schema_version", kSchemaVersion},
                   {"task", to_string(cfg.task)},
                   {"model_kind", to_string(cfg.model_kind)},
                   {"budget", cfg.budget},
                   {"seed", cfg.seed},
                   {"per_k", json::array()}};

    Matrix plot_k(cfg.eval.k_steps_list.size(), 3);
    for (std::size_t ki = 0; ki < cfg.eval.k_steps_list.size(); ++ki) {
        const std::size_t k = cfg.eval.k_steps_list[ki];
        std::vector<InstanceMetrics> metrics(n_inst);
        parallel_for(n_inst, 1, [&](std::size_t j0, std::size_t j1) {
            for (std::size_t j = j0; j < j1; ++j) {
                const std::uint64_t draw_seed = detail::mix_seed(detail::mix_seed(eval_seed, j), k);
                const Matrix draws = sample_any(model, instances[j].x, k, cfg.eval.s_draws, draw_seed);
                metrics[j].rmse = rmse(draws, instances[j].theta);
                metrics[j].mmd = mmd_squared(draws, references[j]);
                metrics[j].c2st = c2st(draws, references[j], detail::mix_seed(draw_seed, 0xC2));
            }
        });

        std::vector<double> rmse_v(n_inst), mmd_v(n_inst), c2st_v(n_inst);
        for (std::size_t j = 0; j < n_inst; ++j) {
            rmse_v[j] = metrics[j].rmse;
            mmd_v[j] = metrics[j].mmd;
            c2st_v[j] = metrics[j].c2st;
            per_instance << to_string(cfg.task) << ',' << to_string(cfg.model_kind) << ',' << cfg.budget << ',' << k
                         << ',' << j << ',' << fmt_g17(metrics[j].rmse) << ',' << fmt_g17(metrics[j].mmd) << ','
                         << fmt_g17(metrics[j].c2st) << '\n';
        }
        const double ms_per_1k = time_sampling_ms_per_1k(model, instances[0].x, k, detail::mix_seed(eval_seed, 0x712E));
        aggregate["per_k"].push_back(json{{"k_steps", k},
                                          {"rmse_mean", mean(rmse_v)},
                                          {"rmse_se", standard_error(rmse_v)},
                                          {"mmd_mean", mean(mmd_v)},
                                          {"mmd_se", standard_error(mmd_v)},
                                          {"c2st_mean", mean(c2st_v)},
                                          {"c2st_sd", sample_sd(c2st_v)},
                                          {"c2st_se", standard_error(c2st_v)},
                                          {"sampling_ms_per_1k", ms_per_1k}});
        plot_k(ki, 0) = static_cast<double>(k);
        plot_k(ki, 1) = mean(c2st_v);
        plot_k(ki, 2) = standard_error(c2st_v);
    }

    // Optional simulation-based calibration of the sampler.
    if (cfg.eval.n_sbc > 0) {
        const Task task = cfg.task;
        PosteriorSampler sampler = [&](const ObservationSet& x, std::size_t s, std::uint64_t draw_seed) {
            return sample_any(model, x, cfg.eval.sbc_k_steps, s, draw_seed);
        };
        PriorPredictive prior_pred = [task](Rng& rng) { return simulate_record(task, rng); };
        Rng sbc_rng = Rng::from(cfg.seed, 0x53BC);
        const SbcResult sbc =
            sbc_ece(sampler, prior_pred, task_info(task).theta_dim, cfg.eval.n_sbc, cfg.eval.sbc_draws, sbc_rng);
        aggregate["sbc"] = json{{"quantiles", sbc.quantiles},
                                {"ece_per_dim", sbc.ece_per_dim},
                                {"max_ece", sbc.max_ece},
                                {"k_steps", cfg.eval.sbc_k_steps},
                                {"n_sbc", cfg.eval.n_sbc},
                                {"draws_per_instance", cfg.eval.sbc_draws},
                                {"low_draw_warning", sbc.low_draw_warning}};
        std::ostringstream calib;
        calib << "quantile";
        for (std::size_t d = 0; d < task_info(task).theta_dim; ++d) calib << ",coverage_dim" << d;
        calib << '\n';
        for (std::size_t q = 0; q < sbc.quantiles.size(); ++q) {
            calib << fmt_g17(sbc.quantiles[q]);
            for (std::size_t d = 0; d < task_info(task).theta_dim; ++d) calib << ',' << fmt_g17(sbc.coverage(q, d));
            calib << '\n';
        }
        atomic_write_text(out_dir / "plot_calibration.csv", calib.str());
    }

    atomic_write_text(per_instance_path, per_instance.str());
    atomic_write_text(aggregate_path, aggregate.dump(2) + "\n");
    write_csv(plot_k_path, {"k_steps", "c2st_mean", "c2st_se"}, plot_k);

    json manifest{{"schema_version", kSchemaVersion},
                  {"kind", "evaluate"},
                  {"config", config_to_json(cfg)},
                  {"checkpoint", checkpoint_path.string()},
                  {"artifacts",
                   {{"per_instance", per_instance_path.string()},
                    {"aggregate", aggregate_path.string()},
                    {"plot_c2st_vs_k", plot_k_path.string()}}}};
    atomic_write_text(manifest_path, manifest.dump(2) + "\n");
    return {per_instance_path, aggregate_path, plot_k_path, manifest_path};
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkSuite {
    std::vector<Task> tasks;
    std::vector<ModelKind> models;
    std::vector<std::size_t> budgets;
    std::vector<std::size_t> k_steps_list;
    std::uint64_t seed = 1;
    json overrides;  // applied on top of each cell's default config
};

inline BenchmarkSuite suite_from_json(const json& j) {
    detail::check_keys(j, {"tasks", "models", "budgets", "k_steps_list", "seed", "overrides"}, "suite");
    BenchmarkSuite suite;
    for (const auto& t : j.at("tasks")) suite.tasks.push_back(task_from_string(t.get<std::string>()));
    for (const auto& m : j.at("models")) suite.models.push_back(model_kind_from_string(m.get<std::string>()));
    suite.budgets = j.at("budgets").get<std::vector<std::size_t>>();
    suite.k_steps_list = j.at("k_steps_list").get<std::vector<std::size_t>>();
    if (!j.contains("seed")) throw ConfigError("suite: seed is mandatory");
    suite.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("overrides")) suite.overrides = j.at("overrides");
    return suite;
}

inline ExperimentConfig cell_config(const BenchmarkSuite& suite, Task task, ModelKind kind, std::size_t budget) {
    json base{{"task", to_string(task)}, {"model_kind", to_string(kind)}, {"seed", suite.seed}, {"budget", budget}};
    for (const auto& [key, value] : suite.overrides.items()) base[key] = value;
    return config_from_json(base);
}

struct BenchmarkOutput {
    std::size_t cells_total = 0;
    std::size_t cells_run = 0;
    std::size_t cells_skipped = 0;
    fs::path results_csv;
};

// simulate -> train -> sample -> evaluate for each (task, model, M, K) cell,
// resumable at cell granularity via manifest presence.
inline BenchmarkOutput run_benchmark(const BenchmarkSuite& suite, const fs::path& out_root, bool dry_run,
                                     std::ostream& log = std::cout) {
    BenchmarkOutput out;
    out.results_csv = out_root / "results.csv";
    const fs::path cache_dir = out_root / "ref_cache";

    std::ostringstream merged;
    merged << "task,model_kind,budget,k_steps,c2st_mean,c2st_se,rmse_mean,mmd_mean,sampling_ms_per_1k,train_s\n";

    for (Task task : suite.tasks) {
        for (ModelKind kind : suite.models) {
            for (std::size_t budget : suite.budgets) {
                const fs::path run_dir = out_root / to_string(task) / to_string(kind) / ("m" + std::to_string(budget));
                ExperimentConfig cfg = cell_config(suite, task, kind, budget);

                double train_s = 0.0;
                const fs::path train_manifest = run_dir / "train" / "manifest.json";
                const bool need_train = !fs::exists(train_manifest);
                if (dry_run) {
                    log << "plan: train " << to_string(task) << "/" << to_string(kind) << "/m" << budget
                        << (need_train ? "" : " (cached)") << "\n";
                } else if (need_train) {
                    run_simulate(task, budget, cfg.seed, run_dir / "data", true);
                    const TrainOutput t = run_train(cfg, run_dir / "train", true);
                    train_s = t.train_seconds;
                } else {
                    train_s = json::parse(read_text(train_manifest)).at("train_s").get<double>();
                }

                for (std::size_t k : suite.k_steps_list) {
                    ++out.cells_total;
                    const fs::path cell_dir = run_dir / ("k" + std::to_string(k));
                    const fs::path cell_manifest = cell_dir / "manifest.json";
                    if (dry_run) {
                        log << "plan: cell " << to_string(task) << "/" << to_string(kind) << "/m" << budget << "/k" << k
                            << (fs::exists(cell_manifest) ? " (cached)" : "") << "\n";
                        continue;
                    }
                    if (fs::exists(cell_manifest)) {
                        ++out.cells_skipped;
                    } else {
                        ExperimentConfig cell_cfg = cfg;
                        cell_cfg.eval.k_steps_list = {k};
                        run_evaluate(cell_cfg, run_dir / "train" / "checkpoint.json", cell_dir, true, cache_dir);
                        ++out.cells_run;
                    }
                    const json agg = json::parse(read_text(cell_dir / "aggregate.json"));
                    const json& row = agg.at("per_k").at(0);
                    merged << to_string(task) << ',' << to_string(kind) << ',' << budget << ',' << k << ','
                           << fmt_g17(row.at("c2st_mean").get<double>()) << ','
                           << fmt_g17(row.at("c2st_se").get<double>()) << ','
                           << fmt_g17(row.at("rmse_mean").get<double>()) << ','
                           << fmt_g17(row.at("mmd_mean").get<double>()) << ','
                           << fmt_g17(row.at("sampling_ms_per_1k").get<double>()) << ',' << fmt_g17(train_s) << '\n';
                }
            }
        }
    }

    if (dry_run) {
        log << "planned cells: " << out.cells_total << "\n";
        return out;
    }
    atomic_write_text(out.results_csv, merged.str());

    // Budget-trend plot data: one row per (task, model, M) at each K.
    std::ostringstream plot_m;
    plot_m << "task,model_kind,k_steps,budget,c2st_mean,c2st_se\n";
    for (Task task : suite.tasks) {
        for (ModelKind kind : suite.models) {
            for (std::size_t k : suite.k_steps_list) {
                for (std::size_t budget : suite.budgets) {
                    const fs::path cell_dir =
                        out_root / to_string(task) / to_string(kind) / ("m" + std::to_string(budget)) / ("k" + std::to_string(k));
                    const json agg = json::parse(read_text(cell_dir / "aggregate.json"));
                    const json& row = agg.at("per_k").at(0);
                    plot_m << to_string(task) << ',' << to_string(kind) << ',' << k << ',' << budget << ','
                           << fmt_g17(row.at("c2st_mean").get<double>()) << ','
                           << fmt_g17(row.at("c2st_se").get<double>()) << '\n';
                }
            }
        }
    }
    atomic_write_text(out_root / "plot_c2st_vs_m.csv", plot_m.str());
    return out;
}

}  // namespace sbicm
