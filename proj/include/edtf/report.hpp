#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace edtf {

enum class ColumnType { Int, Real, Text, Bool };

struct Column {
    std::string name;
    ColumnType type;
    bool operator==(const Column &) const = default;
};

using Cell = std::variant<int64_t, double, std::string, bool>;

enum class ReportFormat { Csv, Json };

ReportFormat parse_report_format(const std::string & s);
const char * extension(ReportFormat f);

// A table plus free-form metadata. No timestamps, so reports are reproducible.
struct ForensicReport {
    std::string kind;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<Column> columns;
    std::vector<std::vector<Cell>> rows;

    void add_row(std::vector<Cell> row);

    // RFC-4180: CRLF line ends, fields quoted when they hold , " CR or LF.
    std::string to_csv() const;
    nlohmann::json to_json() const;

    static ForensicReport from_json(const nlohmann::json & j);
    // CSV carries no types or metadata, so those are supplied.
    static ForensicReport from_csv(const std::string & text, std::string kind, std::vector<Column> columns);

    void write(const std::filesystem::path & dir, ReportFormat f) const;

    bool operator==(const ForensicReport & other) const;
};

// Shortest round-trip decimal form.
std::string format_real(double x);

} // namespace edtf
