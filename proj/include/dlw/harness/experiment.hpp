#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dlw/data/dgp.hpp"
#include "dlw/estimators/registry.hpp"
#include "dlw/flow/fit.hpp"
#include "dlw/harness/config.hpp"
#include "dlw/harness/tables.hpp"

namespace dlw::harness {

/// splitmix64 finalizer; separates the random streams of one replication.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct ReplicationResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<estimators::EstimateReport> reports;
    double true_att = 0.0;
    double true_ate = 0.0;
    std::vector<flow::EpochRecord> log_treated;
    std::vector<flow::EpochRecord> log_control;
};

/// One replication as a pure function of (cell, config, index).
inline ReplicationResult run_replication(const data::DgpConfig& cell, const ExperimentConfig& cfg, std::size_t index) {
    ReplicationResult res;
    res.index = index;
    res.seed = cfg.base_seed + index;
    try {
        data::DgpConfig dgp = cell;
        dgp.seed = res.seed;
        const auto ds = data::gen_setting(dgp);
        res.true_att = *ds.true_att;
        res.true_ate = (*ds.y1 - *ds.y0).mean();

        estimators::EstimatorInputs in;
        in.forest = cfg.forest;
        in.forest.seed = derive_seed(res.seed, 3);
        in.weights.clip_quantile = cfg.weight_clip_quantile;
        std::optional<flow::FlowModel> model_t, model_c;
        if (estimators::needs_flows(cfg.estimators)) {
            flow::FitConfig fc = cfg.fit;
            fc.seed = derive_seed(res.seed, 1);
            model_t = flow::fit(ds.group_covariates(1), fc);
            res.log_treated = model_t->train_log();
            fc.seed = derive_seed(res.seed, 2);
            model_c = flow::fit(ds.group_covariates(0), fc);
            res.log_control = model_c->train_log();
            in.model_t = &*model_t;
            in.model_c = &*model_c;
        }
        res.reports = estimators::run_estimators(ds, cfg.estimators, in);
        for (auto& r : res.reports) r.replication = index;
        res.ok = true;
    } catch (const Error& e) {
        res.ok = false;
        res.error = e.what();
        res.reports.clear();
    }
    return res;
}

inline void write_replication_files(const fs::path& cell_dir, const ReplicationResult& r) {
    const std::string stem = "rep_" + std::to_string(r.index);
    if (!r.ok) {
        detail::write_file(cell_dir / (stem + "_failure.txt"),
                           [&](std::ostream& out) { out << "seed " << r.seed << '\n' << r.error << '\n'; });
        return;
    }
    detail::write_file(cell_dir / (stem + "_estimates.csv"), [&](std::ostream& out) {
        out << estimators::EstimateReport::csv_header << '\n';
        for (const auto& rep : r.reports) {
            out << rep.estimator_name << ',' << rep.replication << ',' << format_real(rep.att_hat) << ',' << rep.n1
                << ',' << rep.n0 << ',' << format_real(rep.weights.ess) << ',' << format_real(rep.weights.min) << ','
                << format_real(rep.weights.max) << '\n';
        }
    });
    if (!r.log_treated.empty()) emit_convergence(r.log_treated, cell_dir / (stem + "_nll_treated.csv"));
    if (!r.log_control.empty()) emit_convergence(r.log_control, cell_dir / (stem + "_nll_control.csv"));
}

inline constexpr double kMaxFailureFraction = 0.2;

struct CellOutcome {
    std::vector<ReplicationResult> reps; // in index order, only those that ran
    bool aborted = false;
};

/// Runs the replications of one cell, optionally on a worker pool. Stops
/// dispatching once failures exceed the allowed fraction of reps.
inline CellOutcome run_cell(const data::DgpConfig& cell, const ExperimentConfig& cfg, const fs::path& cell_dir,
                            std::ostream* log = &std::cerr) {
    std::vector<std::optional<ReplicationResult>> slots(cfg.reps);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> failures{0};
    std::atomic<bool> aborted{false};
    std::mutex log_mutex;
    const auto limit = static_cast<std::size_t>(kMaxFailureFraction * static_cast<double>(cfg.reps));

    auto worker = [&]() {
        while (!aborted.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.reps) return;
            const auto t0 = std::chrono::steady_clock::now();
            auto r = run_replication(cell, cfg, i);
            write_replication_files(cell_dir, r);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (!r.ok && failures.fetch_add(1) + 1 > limit) aborted.store(true);
            if (log) {
                std::lock_guard lock(log_mutex);
                *log << cell_dir.filename().string() << " rep " << i << (r.ok ? " ok" : " FAILED: " + r.error) << " ("
                     << static_cast<int>(secs) << " s)\n";
            }
            slots[i] = std::move(r);
        }
    };

    const std::size_t workers = std::min(cfg.workers, cfg.reps);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    CellOutcome out;
    out.aborted = aborted.load();
    for (auto& s : slots)
        if (s) out.reps.push_back(std::move(*s));
    return out;
}

/// Bias/RMSE rows for one cell, one per requested estimator in config order.
inline std::vector<ResultRow> aggregate_cell(const CellKey& key, const std::vector<std::string>& names,
                                             const CellOutcome& outcome) {
    std::vector<ResultRow> rows;
    std::size_t failed = 0;
    for (const auto& r : outcome.reps) failed += r.ok ? 0 : 1;
    for (const auto& name : names) {
        Accumulator acc;
        for (const auto& r : outcome.reps) {
            if (!r.ok) continue;
            for (const auto& rep : r.reports) {
                if (rep.estimator_name != name) continue;
                acc.add(rep.att_hat, name == "ate_dlw" ? r.true_ate : r.true_att, rep.weights.ess);
            }
        }
        ResultRow row;
        row.cell = key;
        row.estimator = name;
        row.reps = acc.count;
        row.failed = failed;
        row.status = outcome.aborted ? "aborted" : "ok";
        row.bias = outcome.aborted ? std::nan("") : acc.bias();
        row.rmse = outcome.aborted ? std::nan("") : acc.rmse();
        row.mean_ess = outcome.aborted ? std::nan("") : acc.mean_ess();
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Every cell of the grid; per-replication files go under output_dir/cell_*/,
/// followed by summary.csv and summary.md at both levels.
inline ResultTable run_experiment(const ExperimentConfig& cfg, std::ostream* log = &std::cerr) {
    cfg.validate();
    const fs::path root(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError(root.string(), ec.message());

    ResultTable table;
    for (const auto& cell : cfg.cells()) {
        const CellKey key{cell.setting, cell.d, cell.n, cell.s_c};
        const auto outcome = run_cell(cell, cfg, root / key.dir_name(), log);
        if (outcome.aborted && log) {
            *log << key.dir_name() << " aborted: more than " << static_cast<int>(kMaxFailureFraction * 100)
                 << "% of replications failed\n";
        }
        auto rows = aggregate_cell(key, cfg.estimators, outcome);
        table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    }
    emit_tables(table, TableFormat::csv, root);
    emit_tables(table, TableFormat::markdown, root);
    return table;
}

inline bool any_aborted(const ResultTable& t) {
    return std::any_of(t.rows.begin(), t.rows.end(), [](const ResultRow& r) { return r.status != "ok"; });
}

} // namespace dlw::harness
