#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace stainforge {

/// RFC 4180 subset: comma separated, double-quoted fields may contain commas
/// and doubled quotes, CRLF or LF line ends. Blank lines are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// 1-based source line of each row, for error messages.
    std::vector<std::size_t> lines;

    /// Index of `name` in the header, or npos.
    std::size_t column(std::string_view name) const;
};

/// Throws SchemaViolation on unterminated quotes or rows whose width differs
/// from the header.
CsvTable parse_csv(std::istream& in, const std::string& source_name);
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field when it contains a comma, quote or line break.
std::string csv_escape(std::string_view field);

} // namespace stainforge
