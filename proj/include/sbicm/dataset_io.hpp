#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbicm/checkpoint.hpp"
#include "sbicm/io.hpp"
#include "sbicm/simulators.hpp"

namespace sbicm {

inline std::string dataset_stem(Task task, std::size_t budget, std::uint64_t seed) {
    return to_string(task) + "_m" + std::to_string(budget) + "_s" + std::to_string(seed);
}

// CSV: theta_0..theta_{D-1}, x_0..x_{n_obs*obs_dim-1} (sets flattened
// row-major). Sidecar JSON holds task, budget, seed and the standardization.
inline std::pair<std::filesystem::path, std::filesystem::path> write_dataset(const std::filesystem::path& dir,
                                                                             const TrainingSet& set) {
    const TaskInfo info = task_info(set.task);
    std::vector<std::string> header;
    for (std::size_t d = 0; d < info.theta_dim; ++d) header.push_back("theta_" + std::to_string(d));
    for (std::size_t j = 0; j < info.n_obs * info.obs_dim; ++j) header.push_back("x_" + std::to_string(j));

    Matrix rows(set.records.size(), header.size());
    for (std::size_t m = 0; m < set.records.size(); ++m) {
        double* r = rows.row(m);
        for (std::size_t d = 0; d < info.theta_dim; ++d) r[d] = set.records[m].theta[d];
        const auto& x = set.records[m].x.values;
        for (std::size_t j = 0; j < x.values.size(); ++j) r[info.theta_dim + j] = x.values[j];
    }

    const std::string stem = dataset_stem(set.task, set.budget, set.seed);
    const auto csv_path = dir / (stem + ".csv");
    const auto json_path = dir / (stem + ".json");
    write_csv(csv_path, header, rows);

    json meta{{"schema_version", kSchemaVersion},
              {"task", to_string(set.task)},
              {"budget", set.budget},
              {"seed", set.seed},
              {"standardization", to_json(set.stats)}};
    atomic_write_text(json_path, meta.dump(2) + "\n");
    return {csv_path, json_path};
}

inline TrainingSet read_dataset(const std::filesystem::path& csv_path) {
    namespace fs = std::filesystem;
    fs::path json_path = csv_path;
    json_path.replace_extension(".json");
    const json meta = json::parse(read_text(json_path));

    TrainingSet set;
    set.task = task_from_string(meta.at("task").get<std::string>());
    set.budget = meta.at("budget").get<std::size_t>();
    set.seed = meta.at("seed").get<std::uint64_t>();
    set.stats = standardization_from_json(meta.at("standardization"));

    const TaskInfo info = task_info(set.task);
    const CsvTable table = read_csv(csv_path);
    const std::size_t expected_cols = info.theta_dim + info.n_obs * info.obs_dim;
    if (table.values.cols != expected_cols) throw ConfigError("dataset: column count mismatch");
    if (table.values.rows != set.budget) throw ConfigError("dataset: row count does not match budget");

    set.records.resize(table.values.rows);
    for (std::size_t m = 0; m < table.values.rows; ++m) {
        const double* r = table.values.row(m);
        set.records[m].theta.assign(r, r + info.theta_dim);
        set.records[m].x.values = Matrix(info.n_obs, info.obs_dim);
        for (std::size_t j = 0; j < info.n_obs * info.obs_dim; ++j) {
            set.records[m].x.values.values[j] = r[info.theta_dim + j];
        }
    }
    return set;
}

// Draws CSV: draw_index, theta_0.., optional log_density.
inline void write_draws_csv(const std::filesystem::path& path, const Matrix& draws,
                            const std::vector<double>* log_density = nullptr) {
    std::vector<std::string> header{"draw_index"};
    for (std::size_t d = 0; d < draws.cols; ++d) header.push_back("theta_" + std::to_string(d));
    if (log_density) header.push_back("log_density");

    Matrix rows(draws.rows, header.size());
    for (std::size_t i = 0; i < draws.rows; ++i) {
        double* r = rows.row(i);
        r[0] = static_cast<double>(i);
        for (std::size_t d = 0; d < draws.cols; ++d) r[1 + d] = draws(i, d);
        if (log_density) r[1 + draws.cols] = (*log_density)[i];
    }
    write_csv(path, header, rows);
}

// Reference draws CSV: theta_0..theta_{D-1}.
inline void write_reference_csv(const std::filesystem::path& path, const Matrix& draws) {
    std::vector<std::string> header;
    for (std::size_t d = 0; d < draws.cols; ++d) header.push_back("theta_" + std::to_string(d));
    write_csv(path, header, draws);
}

inline Matrix read_reference_csv(const std::filesystem::path& path) { return read_csv(path).values; }

}  // namespace sbicm
