#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace frachom::io {

/// Shortest round-trip decimal form; locale independent.
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (res.ec != std::errc{}) throw std::runtime_error("number formatting failed");
    return std::string(buf.data(), res.ptr);
}

/// Comma-separated table with a fixed header row.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void add_row(const std::vector<double>& values)
    {
        if (values.size() != columns_.size()) throw std::invalid_argument("CSV row width mismatch");
        std::vector<std::string> row;
        row.reserve(values.size());
        for (double v : values) row.push_back(format_double(v));
        rows_.push_back(std::move(row));
    }

    void add_row(std::vector<std::string> cells)
    {
        if (cells.size() != columns_.size()) throw std::invalid_argument("CSV row width mismatch");
        rows_.push_back(std::move(cells));
    }

    std::size_t rows() const { return rows_.size(); }

    std::string str() const
    {
        std::string out;
        append_line(out, columns_);
        for (const auto& r : rows_) append_line(out, r);
        return out;
    }

private:
    static void append_line(std::string& out, const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    }

    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

inline void write_text(const std::string& path, std::string_view text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

} // namespace frachom::io
