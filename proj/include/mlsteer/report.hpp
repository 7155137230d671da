#pragma once

// Output files: CSV tables (header row, `t` first, 17 significant digits) and JSON reports.
// Nothing time- or host-dependent is written, so identical inputs give identical bytes.

#include "config.hpp"
#include "errors.hpp"
#include "linalg.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace mlsteer {

inline constexpr const char* kReportSchema = "mlsteer/1";

struct Table {
    std::string name;  // file stem
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void add(std::vector<double> row) {
        if (row.size() != columns.size()) throw DimensionError("table '" + name + "': row width does not match header");
        rows.push_back(std::move(row));
    }
};

/// Column names prefix_1 .. prefix_n.
inline std::vector<std::string> numbered(const std::string& prefix, Eigen::Index n) {
    std::vector<std::string> out;
    for (Eigen::Index i = 1; i <= n; ++i) out.push_back(prefix + "_" + std::to_string(i));
    return out;
}

/// Row-major entry names prefix_ij (1-based).
inline std::vector<std::string> matrix_columns(const std::string& prefix, Eigen::Index rows, Eigen::Index cols) {
    std::vector<std::string> out;
    for (Eigen::Index i = 1; i <= rows; ++i)
        for (Eigen::Index k = 1; k <= cols; ++k) out.push_back(prefix + "_" + std::to_string(i) + std::to_string(k));
    return out;
}

inline void append(std::vector<double>& row, const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(v(i));
}

inline void append(std::vector<double>& row, const Matrix& M) {
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
}

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string to_csv(const Table& t) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += format_number(row[i]);
        }
        out += '\n';
    }
    return out;
}

inline json to_json(const Table& t) {
    json rows = json::array();
    for (const auto& r : t.rows) {
        json row = json::array();
        for (double x : r) row.push_back(std::isfinite(x) ? json(x) : json(format_number(x)));
        rows.push_back(row);
    }
    return {{"columns", t.columns}, {"rows", rows}};
}

/// JSON numbers must be finite; non-finite values are written as strings.
inline json finite_or_string(double x) { return std::isfinite(x) ? json(x) : json(format_number(x)); }

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open output file " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("failed writing output file " + path.string());
}

struct RunReport {
    std::string command;
    std::string inputs_digest;
    std::vector<std::string> outputs;  // file names relative to the output directory
    std::vector<std::string> diagnostics;
    std::vector<std::pair<std::string, double>> timing;  // wall-clock seconds per phase
    json results = json::object();
    std::vector<Table> tables;
};

/// Writes tables as CSV files (format "csv") or embeds them in the report (format "json"),
/// then writes <command>.json. Returns the list of files written.
inline std::vector<std::string> emit_outputs(RunReport& report, const std::filesystem::path& out_dir, const std::string& format) {
    if (format != "csv" && format != "json") throw ConfigError("--format must be csv or json, got '" + format + "'");
    std::filesystem::create_directories(out_dir);
    report.outputs.clear();
    json tables = json::object();
    for (const auto& t : report.tables) {
        if (format == "csv") {
            const std::string file = t.name + ".csv";
            write_file(out_dir / file, to_csv(t));
            report.outputs.push_back(file);
        } else {
            tables[t.name] = to_json(t);
        }
    }
    const std::string report_file = report.command + ".json";
    report.outputs.push_back(report_file);
    json j{{"schema", kReportSchema},
           {"command", report.command},
           {"inputs_digest", report.inputs_digest},
           {"results", report.results},
           {"diagnostics", report.diagnostics},
           {"outputs", report.outputs}};
    if (format == "json") j["tables"] = tables;
    write_file(out_dir / report_file, j.dump(2) + "\n");
    return report.outputs;
}

}  // namespace mlsteer
