#include "kmeflow/output.hpp"

#include <fmt/format.h>
#include "json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kmeflow {

std::string_view format_extension(OutputFormat f) { return f == OutputFormat::Csv ? "csv" : "json"; }

Table::Table(std::vector<std::string> columns) : columns_(std::move(columns)) {
    if (columns_.empty()) throw std::invalid_argument("a table needs at least one column");
}

void Table::add_row(std::vector<Cell> row) {
    if (row.size() != columns_.size()) {
        throw std::invalid_argument(fmt::format("row has {} cells, schema has {}", row.size(), columns_.size()));
    }
    rows_.push_back(std::move(row));
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{}", v);
}

namespace {

std::string cell_text(const Table::Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
    const auto& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char ch : s) {
        if (ch == '"') quoted += '"';
        quoted += ch;
    }
    return quoted + '"';
}

nlohmann::ordered_json cell_json(const Table::Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) return *i;
    if (const auto* d = std::get_if<double>(&c)) {
        if (std::isfinite(*d)) return *d;
        return format_number(*d);
    }
    return std::get<std::string>(c);
}

void write_csv(std::ostream& os, const Table& table, const Metadata& meta) {
    for (const auto& [key, value] : meta) {
        std::istringstream lines(value);
        std::string line;
        bool any = false;
        while (std::getline(lines, line)) {
            os << "# " << key << ": " << line << '\n';
            any = true;
        }
        if (!any) os << "# " << key << ":\n";
    }
    const auto& cols = table.columns();
    for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
    os << '\n';
    for (const auto& row : table.rows()) {
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << cell_text(row[c]);
        os << '\n';
    }
}

void write_json(std::ostream& os, const Table& table, const Metadata& meta) {
    nlohmann::ordered_json doc;
    doc["metadata"] = nlohmann::ordered_json::object();
    for (const auto& [key, value] : meta) doc["metadata"][key] = value;
    doc["columns"] = table.columns();
    doc["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : table.rows()) {
        nlohmann::ordered_json r = nlohmann::ordered_json::array();
        for (const auto& c : row) r.push_back(cell_json(c));
        doc["rows"].push_back(std::move(r));
    }
    os << doc.dump(2) << '\n';
}

}  // namespace

void write_table(std::ostream& os, const Table& table, const Metadata& meta, OutputFormat format) {
    if (format == OutputFormat::Csv) {
        write_csv(os, table, meta);
    } else {
        write_json(os, table, meta);
    }
}

std::filesystem::path write_table_file(const std::filesystem::path& dir, std::string_view stem, const Table& table,
                                       const Metadata& meta, OutputFormat format) {
    std::filesystem::create_directories(dir);
    const auto path = dir / fmt::format("{}.{}", stem, format_extension(format));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_table(out, table, meta, format);
    if (!out) throw std::runtime_error("failed writing " + path.string());
    return path;
}

std::string csv_body(std::string_view text) {
    std::string body;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(pos, end - pos);
        if (line.empty() || line.front() != '#') {
            body.append(line);
            body.push_back('\n');
        }
        pos = end + 1;
    }
    return body;
}

}  // namespace kmeflow
