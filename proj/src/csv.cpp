#include "gridpipe/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gridpipe {

namespace {

// One record per call; handles quoted fields spanning lines. Returns false
// at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    int c = in.get();
    if (c == EOF) return false;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    while (true) {
        if (c == EOF) {
            fields.push_back(field);
            return true;
        }
        any = true;
        if (in_quotes) {
            if (c == '"') {
                int next = in.peek();
                if (next == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(static_cast<char>(c));
            }
        } else if (c == '"' && field.empty()) {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            fields.push_back(std::move(field));
            return true;
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get();
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    (void)any;
}

bool parse_number(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    if (begin != end && *begin == '+') ++begin;  // from_chars rejects a leading '+'
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\r\n") != std::string::npos;
}

void write_field(std::ostream& out, const std::string& s) {
    if (!needs_quoting(s)) {
        out << s;
        return;
    }
    out << '"';
    for (char c : s) {
        if (c == '"') {
            out << "\"\"";
        } else {
            out << c;
        }
    }
    out << '"';
}

}  // namespace

Table load_csv(const std::string& path, const std::string& target_name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("csv: cannot open '" + path + "'");

    std::vector<std::string> header;
    if (!read_record(in, header) || header.empty()) {
        throw DataError("csv: '" + path + "' has no header row");
    }

    int target_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == target_name) target_col = static_cast<int>(i);
    }
    if (target_col < 0) {
        throw DataError("csv: target column '" + target_name + "' not found in '" + path + "'");
    }

    const std::size_t width = header.size();
    std::vector<std::vector<std::string>> cells(width);
    std::vector<std::string> record;
    int record_no = 1;  // header is record 1
    while (read_record(in, record)) {
        ++record_no;
        if (record.size() == 1 && record[0].empty()) continue;  // trailing blank line
        if (record.size() != width) {
            throw DataError("csv: row " + std::to_string(record_no) + " has " +
                            std::to_string(record.size()) + " fields, expected " +
                            std::to_string(width));
        }
        for (std::size_t i = 0; i < width; ++i) cells[i].push_back(std::move(record[i]));
    }

    const std::size_t n_rows = cells.empty() ? 0 : cells[0].size();
    std::vector<Column> columns;
    columns.reserve(width);
    for (std::size_t i = 0; i < width; ++i) {
        std::vector<std::uint8_t> missing(n_rows, 0);
        if (static_cast<int>(i) == target_col) {
            for (std::size_t r = 0; r < n_rows; ++r) {
                if (cells[i][r].empty()) {
                    throw DataError("csv: target column '" + target_name +
                                    "' has an empty cell at data row " + std::to_string(r + 1));
                }
            }
            columns.push_back(Column::make_categorical(header[i], "raw/" + header[i],
                                                       std::move(cells[i]), std::move(missing)));
            continue;
        }
        bool numeric = true;
        std::vector<double> values(n_rows, 0.0);
        for (std::size_t r = 0; r < n_rows; ++r) {
            if (cells[i][r].empty()) {
                missing[r] = 1;
                values[r] = std::nan("");
                continue;
            }
            double v = 0.0;
            if (!parse_number(cells[i][r], v)) {
                numeric = false;
                break;
            }
            values[r] = v;
        }
        if (numeric) {
            columns.push_back(Column::make_numeric(header[i], "raw/" + header[i],
                                                   std::move(values), std::move(missing)));
        } else {
            for (std::size_t r = 0; r < n_rows; ++r) missing[r] = cells[i][r].empty() ? 1 : 0;
            columns.push_back(Column::make_categorical(header[i], "raw/" + header[i],
                                                       std::move(cells[i]), std::move(missing)));
        }
    }
    return Table(std::move(columns), target_col);
}

void save_csv(const Table& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("csv: cannot write '" + path + "'");
    for (int i = 0; i < t.n_cols(); ++i) {
        if (i > 0) out << ',';
        write_field(out, t.col(i).name);
    }
    out << '\n';
    for (int r = 0; r < t.n_rows(); ++r) {
        for (int i = 0; i < t.n_cols(); ++i) {
            if (i > 0) out << ',';
            const Column& c = t.col(i);
            if (c.is_missing(static_cast<std::size_t>(r))) continue;
            if (c.kind == ColumnKind::Numeric) {
                out << format_double(c.numeric[static_cast<std::size_t>(r)]);
            } else {
                write_field(out, c.labels[static_cast<std::size_t>(r)]);
            }
        }
        out << '\n';
    }
    if (!out) throw DataError("csv: write failed for '" + path + "'");
}

}  // namespace gridpipe
