#include "stainforge/csv.hpp"

#include "stainforge/error.hpp"

#include <fstream>

namespace stainforge {

std::size_t CsvTable::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    return std::string::npos;
}

CsvTable parse_csv(std::istream& in, const std::string& source_name)
{
    CsvTable table;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t row_line = 1;

    const auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    const auto end_row = [&] {
        end_field();
        const bool blank = row.size() == 1 && row[0].empty();
        if (!blank) {
            if (table.header.empty() && table.rows.empty()) {
                table.header = std::move(row);
            } else {
                if (row.size() != table.header.size())
                    throw Error(Errc::SchemaViolation, source_name + ":" + std::to_string(row_line) + ": expected " +
                                                           std::to_string(table.header.size()) + " fields, found " +
                                                           std::to_string(row.size()));
                table.rows.push_back(std::move(row));
                table.lines.push_back(row_line);
            }
        }
        row.clear();
        row_line = line;
    };

    char c = 0;
    while (in.get(c)) {
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n')
                    ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started)
                throw Error(Errc::SchemaViolation,
                            source_name + ":" + std::to_string(line) + ": quote inside an unquoted field");
            quoted = true;
            field_started = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break;
        case '\n':
            ++line;
            end_row();
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted)
        throw Error(Errc::SchemaViolation, source_name + ":" + std::to_string(row_line) + ": unterminated quote");
    if (field_started || !row.empty())
        end_row();
    if (table.header.empty())
        throw Error(Errc::SchemaViolation, source_name + ": missing header row");
    return table;
}

CsvTable read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::Io, "cannot open " + path.string());
    return parse_csv(in, path.string());
}

std::string csv_escape(std::string_view field)
{
    if (field.find_first_of(",\"\r\n") == std::string_view::npos)
        return std::string(field);
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"')
            out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace stainforge
