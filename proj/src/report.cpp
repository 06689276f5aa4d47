#include "edtf/report.hpp"

#include "edtf/common.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace edtf {

using nlohmann::json;

ReportFormat parse_report_format(const std::string & s) {
    if (s == "csv") {
        return ReportFormat::Csv;
    }
    if (s == "json") {
        return ReportFormat::Json;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown report format " + s);
}

const char * extension(ReportFormat f) {
    return f == ReportFormat::Csv ? ".csv" : ".json";
}

std::string format_real(double x) {
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace {

const char * type_name(ColumnType t) {
    switch (t) {
    case ColumnType::Int: return "int";
    case ColumnType::Real: return "real";
    case ColumnType::Text: return "text";
    case ColumnType::Bool: return "bool";
    }
    return "?";
}

ColumnType type_from_name(const std::string & s) {
    if (s == "int") return ColumnType::Int;
    if (s == "real") return ColumnType::Real;
    if (s == "text") return ColumnType::Text;
    if (s == "bool") return ColumnType::Bool;
    throw Error(ErrorCode::ParseError, "unknown column type " + s);
}

bool cell_matches(const Cell & c, ColumnType t) {
    switch (t) {
    case ColumnType::Int: return std::holds_alternative<int64_t>(c);
    case ColumnType::Real: return std::holds_alternative<double>(c);
    case ColumnType::Text: return std::holds_alternative<std::string>(c);
    case ColumnType::Bool: return std::holds_alternative<bool>(c);
    }
    return false;
}

std::string cell_text(const Cell & c) {
    if (const auto * i = std::get_if<int64_t>(&c)) return std::to_string(*i);
    if (const auto * d = std::get_if<double>(&c)) return format_real(*d);
    if (const auto * b = std::get_if<bool>(&c)) return *b ? "true" : "false";
    return std::get<std::string>(c);
}

std::string csv_field(const std::string & s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char ch : s) {
        out += ch;
        if (ch == '"') {
            out += '"';
        }
    }
    return out + "\"";
}

Cell parse_cell(const std::string & s, ColumnType t) {
    switch (t) {
    case ColumnType::Int: {
        int64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            throw Error(ErrorCode::ParseError, "bad integer field '" + s + "'");
        }
        return v;
    }
    case ColumnType::Real: {
        if (s == "nan") return std::nan("");
        if (s == "inf") return HUGE_VAL;
        if (s == "-inf") return -HUGE_VAL;
        double v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            throw Error(ErrorCode::ParseError, "bad real field '" + s + "'");
        }
        return v;
    }
    case ColumnType::Bool:
        if (s == "true") return true;
        if (s == "false") return false;
        throw Error(ErrorCode::ParseError, "bad bool field '" + s + "'");
    case ColumnType::Text: return s;
    }
    return s;
}

json cell_json(const Cell & c) {
    if (const auto * d = std::get_if<double>(&c)) {
        // JSON has no NaN/inf; keep them as strings.
        if (!std::isfinite(*d)) {
            return format_real(*d);
        }
        return *d;
    }
    return std::visit([](const auto & v) { return json(v); }, c);
}

Cell cell_from_json(const json & j, ColumnType t) {
    switch (t) {
    case ColumnType::Int: return j.get<int64_t>();
    case ColumnType::Real: return j.is_string() ? std::get<double>(parse_cell(j.get<std::string>(), t)) : j.get<double>();
    case ColumnType::Text: return j.get<std::string>();
    case ColumnType::Bool: return j.get<bool>();
    }
    return j.dump();
}

bool cells_equal(const Cell & a, const Cell & b) {
    if (a.index() != b.index()) {
        return false;
    }
    if (const auto * x = std::get_if<double>(&a)) {
        const double y = std::get<double>(b);
        return (std::isnan(*x) && std::isnan(y)) || *x == y;
    }
    return a == b;
}

} // namespace

void ForensicReport::add_row(std::vector<Cell> row) {
    if (row.size() != columns.size()) {
        throw Error(ErrorCode::ShapeMismatch, kind + ": row has " + std::to_string(row.size()) + " cells, expected " +
                                                  std::to_string(columns.size()));
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (!cell_matches(row[i], columns[i].type)) {
            throw Error(ErrorCode::ShapeMismatch, kind + ": column " + columns[i].name + " expects " +
                                                      type_name(columns[i].type));
        }
    }
    rows.push_back(std::move(row));
}

std::string ForensicReport::to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        out += (i ? "," : "") + csv_field(columns[i].name);
    }
    out += "\r\n";
    for (const auto & row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out += (i ? "," : "") + csv_field(cell_text(row[i]));
        }
        out += "\r\n";
    }
    return out;
}

json ForensicReport::to_json() const {
    json cols = json::array();
    for (const auto & c : columns) {
        cols.push_back({{"name", c.name}, {"type", type_name(c.type)}});
    }
    json rs = json::array();
    for (const auto & row : rows) {
        json r = json::array();
        for (const auto & c : row) {
            r.push_back(cell_json(c));
        }
        rs.push_back(std::move(r));
    }
    return {{"kind", kind}, {"metadata", metadata}, {"columns", cols}, {"rows", rs}};
}

ForensicReport ForensicReport::from_json(const json & j) {
    ForensicReport r;
    try {
        r.kind = j.at("kind").get<std::string>();
        r.metadata = j.value("metadata", json::object());
        for (const auto & c : j.at("columns")) {
            r.columns.push_back({c.at("name").get<std::string>(), type_from_name(c.at("type").get<std::string>())});
        }
        for (const auto & row : j.at("rows")) {
            std::vector<Cell> cells;
            for (std::size_t i = 0; i < row.size() && i < r.columns.size(); ++i) {
                cells.push_back(cell_from_json(row[i], r.columns[i].type));
            }
            r.add_row(std::move(cells));
        }
    } catch (const json::exception & ex) {
        throw Error(ErrorCode::ParseError, std::string("report JSON: ") + ex.what());
    }
    return r;
}

ForensicReport ForensicReport::from_csv(const std::string & text, std::string kind, std::vector<Column> columns) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch == '"') {
            quoted = true;
            any = true;
        } else if (ch == ',') {
            rec.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (ch == '\r' || ch == '\n') {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
            rec.push_back(std::move(field));
            field.clear();
            records.push_back(std::move(rec));
            rec.clear();
            any = false;
        } else {
            field += ch;
            any = true;
        }
    }
    if (quoted) {
        throw Error(ErrorCode::ParseError, "unterminated quoted CSV field");
    }
    if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
    }
    if (records.empty()) {
        throw Error(ErrorCode::ParseError, "CSV has no header");
    }
    ForensicReport r;
    r.kind = std::move(kind);
    r.columns = std::move(columns);
    if (records[0].size() != r.columns.size()) {
        throw Error(ErrorCode::ParseError, "CSV header width does not match the columns");
    }
    for (std::size_t i = 0; i < r.columns.size(); ++i) {
        if (records[0][i] != r.columns[i].name) {
            throw Error(ErrorCode::ParseError, "CSV header mismatch at " + r.columns[i].name);
        }
    }
    for (std::size_t k = 1; k < records.size(); ++k) {
        if (records[k].size() != r.columns.size()) {
            throw Error(ErrorCode::ParseError, "CSV row " + std::to_string(k) + " has the wrong width");
        }
        std::vector<Cell> cells;
        for (std::size_t i = 0; i < r.columns.size(); ++i) {
            cells.push_back(parse_cell(records[k][i], r.columns[i].type));
        }
        r.add_row(std::move(cells));
    }
    return r;
}

void ForensicReport::write(const std::filesystem::path & dir, ReportFormat f) const {
    std::filesystem::create_directories(dir);
    const auto path = dir / (kind + extension(f));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out << (f == ReportFormat::Csv ? to_csv() : to_json().dump(2) + "\n");
    if (!out) {
        throw Error(ErrorCode::IoError, "short write to " + path.string());
    }
}

bool ForensicReport::operator==(const ForensicReport & o) const {
    if (kind != o.kind || metadata != o.metadata || columns != o.columns || rows.size() != o.rows.size()) {
        return false;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != o.rows[i].size()) {
            return false;
        }
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            if (!cells_equal(rows[i][k], o.rows[i][k])) {
                return false;
            }
        }
    }
    return true;
}

} // namespace edtf
