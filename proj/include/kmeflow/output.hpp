#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace kmeflow {

inline constexpr std::string_view kToolVersion = "0.3.0";

enum class OutputFormat { Csv, Json };

[[nodiscard]] std::string_view format_extension(OutputFormat f);

/// Ordered key/value pairs written ahead of every table.
using Metadata = std::vector<std::pair<std::string, std::string>>;

/// Column-oriented result table with a fixed schema.
class Table {
public:
    using Cell = std::variant<std::int64_t, double, std::string>;

    explicit Table(std::vector<std::string> columns);

    [[nodiscard]] const std::vector<std::string>& columns() const noexcept { return columns_; }
    [[nodiscard]] const std::vector<std::vector<Cell>>& rows() const noexcept { return rows_; }

    /// Throws std::invalid_argument when the row length does not match the schema.
    void add_row(std::vector<Cell> row);

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<Cell>> rows_;
};

/// Shortest decimal string that round-trips to the same double.
[[nodiscard]] std::string format_number(double v);

/// CSV: "# key: value" lines (multi-line values get one line each), then the
/// header and the rows. JSON: {"metadata": {...}, "columns": [...], "rows": [[...]]}.
void write_table(std::ostream& os, const Table& table, const Metadata& meta, OutputFormat format);

/// Writes `<dir>/<stem>.<ext>`, creating `dir` if needed; returns the path.
std::filesystem::path write_table_file(const std::filesystem::path& dir, std::string_view stem, const Table& table,
                                       const Metadata& meta, OutputFormat format);

/// Lines of a CSV file that are not metadata comments.
[[nodiscard]] std::string csv_body(std::string_view text);

}  // namespace kmeflow
