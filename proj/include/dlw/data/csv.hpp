#pragma once

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dlw/data/dataset.hpp"
#include "dlw/error.hpp"

namespace dlw::data {

namespace csv {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string_view rest(line);
    while (true) {
        const auto pos = rest.find(',');
        out.emplace_back(trim(rest.substr(0, pos)));
        if (pos == std::string_view::npos) break;
        rest.remove_prefix(pos + 1);
    }
    return out;
}

inline double parse_real(const std::string& cell, const std::string& path, std::size_t line, const std::string& column) {
    if (cell.empty()) throw ParseError(path, line, "missing value in column '" + column + "'");
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw ParseError(path, line, "non-numeric value '" + cell + "' in column '" + column + "'");
    }
    return v;
}

/// Header + numeric rows. Only the requested columns are parsed, but every row
/// must have as many cells as the header.
class Table {
public:
    static Table read(std::istream& in, const std::string& path) {
        Table t;
        t.path_ = path;
        std::string line;
        if (!std::getline(in, line)) throw ParseError(path, 1, "empty file, expected header row");
        if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        t.header_ = split(line);
        for (std::size_t j = 0; j < t.header_.size(); ++j) t.index_[t.header_[j]] = j;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            auto cells = split(line);
            if (cells.size() != t.header_.size()) {
                throw ParseError(path, lineno, "expected " + std::to_string(t.header_.size()) + " cells, found " +
                                                   std::to_string(cells.size()));
            }
            t.rows_.push_back(std::move(cells));
            t.lines_.push_back(lineno);
        }
        return t;
    }

    static Table read_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError(path, "cannot open for reading");
        return read(in, path);
    }

    std::size_t column(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ParseError(path_, 1, "missing column '" + name + "'");
        return it->second;
    }
    bool has_column(const std::string& name) const { return index_.contains(name); }

    Vector numeric(const std::string& name) const {
        const std::size_t j = column(name);
        Vector v(static_cast<Eigen::Index>(rows_.size()));
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            v(static_cast<Eigen::Index>(r)) = parse_real(rows_[r][j], path_, lines_[r], name);
        }
        return v;
    }

    Matrix numeric(const std::vector<std::string>& names) const {
        Matrix M(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(names.size()));
        for (std::size_t c = 0; c < names.size(); ++c) M.col(static_cast<Eigen::Index>(c)) = numeric(names[c]);
        return M;
    }

    const std::vector<std::string>& header() const { return header_; }
    std::size_t size() const { return rows_.size(); }
    std::size_t line_of(std::size_t row) const { return lines_.at(row); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<std::string> header_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::size_t> lines_;
};

} // namespace csv

struct PotentialOutcomeTable {
    Matrix X_raw;
    Vector y0;
    Vector y1;
};

/// Reads raw covariates and both potential outcomes from a headed CSV. No standardization.
inline PotentialOutcomeTable ingest_potential_outcome_csv(const std::string& path,
                                                          const std::vector<std::string>& covariates,
                                                          const std::string& y0_column, const std::string& y1_column) {
    if (covariates.empty()) throw InvalidArgument("at least one covariate column is required");
    const auto table = csv::Table::read_file(path);
    return {table.numeric(covariates), table.numeric(y0_column), table.numeric(y1_column)};
}

/// Columns x1..xd, w, y_obs and, when present, y0, y1. Reals use 17 significant digits.
inline void write_dataset_csv(std::ostream& out, const Dataset& ds) {
    for (Eigen::Index j = 0; j < ds.d(); ++j) out << 'x' << (j + 1) << ',';
    out << "w,y_obs";
    if (ds.y0) out << ",y0,y1";
    out << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        for (Eigen::Index j = 0; j < ds.d(); ++j) out << ds.X(i, j) << ',';
        out << ds.W[static_cast<std::size_t>(i)] << ',' << ds.y_obs(i);
        if (ds.y0) out << ',' << (*ds.y0)(i) << ',' << (*ds.y1)(i);
        out << '\n';
    }
}

inline void save_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot open for writing");
    write_dataset_csv(out, ds);
    if (!out) throw IoError(path, "write failed");
}

/// Reads a file written by write_dataset_csv. Covariates are taken as-is.
inline Dataset read_dataset_csv(std::istream& in, const std::string& path = "<stream>") {
    const auto table = csv::Table::read(in, path);
    std::vector<std::string> xs;
    for (std::size_t j = 1;; ++j) {
        const std::string name = "x" + std::to_string(j);
        if (!table.has_column(name)) break;
        xs.push_back(name);
    }
    if (xs.empty()) throw ParseError(path, 1, "missing column 'x1'");
    Dataset ds;
    ds.X = table.numeric(xs);
    const Vector w = table.numeric("w");
    ds.W.resize(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (w(i) != 0.0 && w(i) != 1.0) {
            throw ParseError(path, table.line_of(static_cast<std::size_t>(i)), "treatment must be 0 or 1");
        }
        ds.W[static_cast<std::size_t>(i)] = static_cast<int>(w(i));
    }
    ds.y_obs = table.numeric("y_obs");
    if (table.has_column("y0") && table.has_column("y1")) {
        ds.y0 = table.numeric("y0");
        ds.y1 = table.numeric("y1");
    }
    try {
        ds.validate();
    } catch (const Error& e) {
        throw ParseError(path, 1, e.what());
    }
    if (ds.y0 && !ds.treated().empty()) ds.true_att = att_from_potential_outcomes(*ds.y0, *ds.y1, ds.W);
    return ds;
}

inline Dataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    return read_dataset_csv(in, path);
}

} // namespace dlw::data
