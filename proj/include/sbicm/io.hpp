#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"

namespace sbicm {

// Canonical float formatting: 17 significant digits round-trips any double.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Write-then-rename; a killed process never leaves a half-written file.
inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write to " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw ConfigError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CsvTable {
    std::vector<std::string> header;
    Matrix values;
};

inline std::string csv_to_string(const std::vector<std::string>& header, const Matrix& values) {
    std::ostringstream out;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j) out << ',';
        out << header[j];
    }
    out << '\n';
    for (std::size_t i = 0; i < values.rows; ++i) {
        const double* row = values.row(i);
        for (std::size_t j = 0; j < values.cols; ++j) {
            if (j) out << ',';
            out << fmt_g17(row[j]);
        }
        out << '\n';
    }
    return out.str();
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values) {
    atomic_write_text(path, csv_to_string(header, values));
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty CSV: " + path.string());
    {
        std::istringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) table.header.push_back(field);
    }
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::size_t cols = 0;
        while (std::getline(ss, field, ',')) {
            values.push_back(std::strtod(field.c_str(), nullptr));
            ++cols;
        }
        if (cols != table.header.size()) throw ConfigError("ragged CSV row in " + path.string());
        ++rows;
    }
    table.values.rows = rows;
    table.values.cols = table.header.size();
    table.values.values = std::move(values);
    return table;
}

}  // namespace sbicm
