#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dlw/data/csv.hpp"
#include "dlw/error.hpp"
#include "dlw/estimators/registry.hpp"
#include "dlw/flow/flow_model.hpp"

namespace dlw::harness {

using numerics::Matrix;
using numerics::Vector;

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("failed to format real");
    return std::string(buf, ptr);
}

inline double parse_real_cell(const std::string& cell, const std::string& path, std::size_t line, const std::string& col) {
    if (cell == "nan") return std::nan("");
    return data::csv::parse_real(cell, path, line, col);
}

struct CellKey {
    int setting = 0;
    Eigen::Index d = 0;
    Eigen::Index n = 0;
    double s_c = 0.0;

    auto tie() const { return std::tie(setting, s_c, d, n); }
    bool operator<(const CellKey& o) const { return tie() < o.tie(); }
    bool operator==(const CellKey& o) const { return tie() == o.tie(); }

    std::string dir_name() const {
        return "cell_" + std::to_string(setting) + "_" + std::to_string(d) + "_" + std::to_string(n) + "_" + format_real(s_c);
    }
};

struct ResultRow {
    CellKey cell;
    std::string estimator;
    std::size_t reps = 0;   // successful replications
    std::size_t failed = 0; // replications excluded by the failure policy
    std::string status = "ok";
    double bias = 0.0;
    double rmse = 0.0;
    double mean_ess = 0.0;

    bool operator==(const ResultRow& o) const {
        auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
        return cell == o.cell && estimator == o.estimator && reps == o.reps && failed == o.failed &&
               status == o.status && same(bias, o.bias) && same(rmse, o.rmse) && same(mean_ess, o.mean_ess);
    }
};

struct ResultTable {
    std::vector<ResultRow> rows;

    bool operator==(const ResultTable& o) const { return rows == o.rows; }

    std::vector<CellKey> cells() const {
        std::vector<CellKey> out;
        for (const auto& r : rows)
            if (std::find(out.begin(), out.end(), r.cell) == out.end()) out.push_back(r.cell);
        return out;
    }

    ResultTable subset(const CellKey& cell) const {
        ResultTable t;
        for (const auto& r : rows)
            if (r.cell == cell) t.rows.push_back(r);
        return t;
    }

    const ResultRow* find(const CellKey& cell, const std::string& estimator) const {
        for (const auto& r : rows)
            if (r.cell == cell && r.estimator == estimator) return &r;
        return nullptr;
    }
};

/// Bias and RMSE of estimates against their per-replication truths.
struct Accumulator {
    double sum_err = 0.0;
    double sum_sq = 0.0;
    double sum_ess = 0.0;
    std::size_t count = 0;

    void add(double estimate, double truth, double ess) {
        const double e = estimate - truth;
        sum_err += e;
        sum_sq += e * e;
        sum_ess += ess;
        ++count;
    }
    double bias() const { return count ? sum_err / static_cast<double>(count) : std::nan(""); }
    double rmse() const { return count ? std::sqrt(sum_sq / static_cast<double>(count)) : std::nan(""); }
    double mean_ess() const { return count ? sum_ess / static_cast<double>(count) : std::nan(""); }
};

inline constexpr const char* kSummaryHeader = "setting,d,n,s_c,estimator,reps,failed,status,bias,rmse,mean_ess";

inline void write_summary_csv(std::ostream& out, const ResultTable& t) {
    out << kSummaryHeader << '\n';
    for (const auto& r : t.rows) {
        out << r.cell.setting << ',' << r.cell.d << ',' << r.cell.n << ',' << format_real(r.cell.s_c) << ','
            << r.estimator << ',' << r.reps << ',' << r.failed << ',' << r.status << ',' << format_real(r.bias) << ','
            << format_real(r.rmse) << ',' << format_real(r.mean_ess) << '\n';
    }
}

inline ResultTable read_summary_csv(std::istream& in, const std::string& path = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty summary");
    if (data::csv::trim(line) != kSummaryHeader) throw ParseError(path, 1, "unexpected summary header");
    ResultTable t;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (data::csv::trim(line).empty()) continue;
        const auto c = data::csv::split(line);
        if (c.size() != 11) throw ParseError(path, lineno, "expected 11 cells");
        auto integer = [&](const std::string& s, const char* col) {
            const double v = data::csv::parse_real(s, path, lineno, col);
            if (v != std::floor(v) || v < 0) throw ParseError(path, lineno, std::string("non-integer ") + col);
            return v;
        };
        ResultRow r;
        r.cell.setting = static_cast<int>(integer(c[0], "setting"));
        r.cell.d = static_cast<Eigen::Index>(integer(c[1], "d"));
        r.cell.n = static_cast<Eigen::Index>(integer(c[2], "n"));
        r.cell.s_c = parse_real_cell(c[3], path, lineno, "s_c");
        r.estimator = c[4];
        r.reps = static_cast<std::size_t>(integer(c[5], "reps"));
        r.failed = static_cast<std::size_t>(integer(c[6], "failed"));
        r.status = c[7];
        r.bias = parse_real_cell(c[8], path, lineno, "bias");
        r.rmse = parse_real_cell(c[9], path, lineno, "rmse");
        r.mean_ess = parse_real_cell(c[10], path, lineno, "mean_ess");
        t.rows.push_back(std::move(r));
    }
    return t;
}

inline ResultTable load_summary_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    return read_summary_csv(in, path);
}

namespace detail {

inline std::string fixed3(double v) {
    if (std::isnan(v)) return "n/a";
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(3);
    ss << v;
    return ss.str();
}

inline void write_long_markdown(std::ostream& out, const ResultTable& t) {
    out << "| setting | s_c | d | N | estimator | bias | RMSE | mean ESS | reps | failed | status |\n";
    out << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : t.rows) {
        out << "| " << r.cell.setting << " | " << format_real(r.cell.s_c) << " | " << r.cell.d << " | " << r.cell.n
            << " | " << r.estimator << " | " << fixed3(r.bias) << " | " << fixed3(r.rmse) << " | "
            << fixed3(r.mean_ess) << " | " << r.reps << " | " << r.failed << " | " << r.status << " |\n";
    }
}

} // namespace detail

/// Estimators as rows and (d, N) column groups, one table per (setting, s_c),
/// followed by the long form with one row per cell and estimator.
inline void write_summary_markdown(std::ostream& out, const ResultTable& t) {
    std::map<std::pair<int, double>, std::vector<CellKey>> groups;
    for (const auto& c : t.cells()) {
        auto& v = groups[{c.setting, c.s_c}];
        v.push_back(c);
    }
    for (auto& [key, cells] : groups) {
        std::sort(cells.begin(), cells.end());
        out << "## Setting " << key.first << ", s_c = " << format_real(key.second) << "\n\n";
        out << "| estimator |";
        for (const auto& c : cells) out << " d=" << c.d << " N=" << c.n << " bias | RMSE |";
        out << "\n|---|";
        for (std::size_t k = 0; k < cells.size(); ++k) out << "---|---|";
        out << '\n';
        std::vector<std::string> names;
        for (const auto& r : t.rows)
            if (r.cell.setting == key.first && r.cell.s_c == key.second &&
                std::find(names.begin(), names.end(), r.estimator) == names.end())
                names.push_back(r.estimator);
        std::stable_sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
            return estimators::estimator_rank(a) < estimators::estimator_rank(b);
        });
        for (const auto& name : names) {
            out << "| " << name << " |";
            for (const auto& c : cells) {
                const auto* r = t.find(c, name);
                out << ' ' << (r ? detail::fixed3(r->bias) : "") << " | " << (r ? detail::fixed3(r->rmse) : "") << " |";
            }
            out << '\n';
        }
        out << '\n';
    }
    out << "## All cells\n\n";
    detail::write_long_markdown(out, t);
}

enum class TableFormat { csv, markdown };

namespace detail {

inline void write_file(const fs::path& path, const auto& writer) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string(), ec.message());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    writer(out);
    out.flush();
    if (!out) throw IoError(path.string(), "write failed");
}

} // namespace detail

/// Writes summary.csv or summary.md into every cell directory and a combined one into dir.
inline std::vector<fs::path> emit_tables(const ResultTable& t, TableFormat format, const fs::path& dir) {
    if (t.rows.empty()) throw InvalidArgument("cannot emit an empty result table");
    const char* name = format == TableFormat::csv ? "summary.csv" : "summary.md";
    auto write = [&](const fs::path& p, const ResultTable& sub) {
        detail::write_file(p, [&](std::ostream& out) {
            if (format == TableFormat::csv) write_summary_csv(out, sub);
            else write_summary_markdown(out, sub);
        });
    };
    std::vector<fs::path> written;
    for (const auto& c : t.cells()) {
        written.push_back(dir / c.dir_name() / name);
        write(written.back(), t.subset(c));
    }
    written.push_back(dir / name);
    write(written.back(), t);
    return written;
}

inline void write_convergence(std::ostream& out, const std::vector<flow::EpochRecord>& log) {
    out << "epoch,train_nll,val_nll\n";
    for (const auto& r : log) out << r.epoch << ',' << format_real(r.train_nll) << ',' << format_real(r.val_nll) << '\n';
}

inline void emit_convergence(const std::vector<flow::EpochRecord>& log, const fs::path& path) {
    if (log.empty()) throw InvalidArgument("training log is empty; the model has not been trained");
    detail::write_file(path, [&](std::ostream& out) { write_convergence(out, log); });
}

inline void emit_convergence(const flow::FlowModel& model, const fs::path& path) { emit_convergence(model.train_log(), path); }

inline std::vector<flow::EpochRecord> load_convergence(const std::string& path) {
    const auto table = data::csv::Table::read_file(path);
    const Vector e = table.numeric("epoch"), tr = table.numeric("train_nll"), va = table.numeric("val_nll");
    std::vector<flow::EpochRecord> log(static_cast<std::size_t>(e.size()));
    for (Eigen::Index i = 0; i < e.size(); ++i) log[static_cast<std::size_t>(i)] = {static_cast<std::size_t>(e(i)), tr(i), va(i)};
    return log;
}

} // namespace dlw::harness
