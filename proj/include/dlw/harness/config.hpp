#pragma once

// Experiment configuration, read from a JSON document:
//
//   {
//     "grid": {"settings": [2], "d": [8], "n": [5000], "s_c": [0.2]},
//     "reps": 10,
//     "base_seed": 0,
//     "output_dir": "results",
//     "estimators": ["base", "iptw", "dlw"],
//     "fit": {"layers": 6, "hidden_units": 64, "lr": 1e-4, ...},
//     "forest": {"trees": 200, "max_depth": 8, "bag_fraction": 0.8},
//     "weight_clip_quantile": null,
//     "workers": 1
//   }
//
// Every section except "grid", "reps" and "estimators" is optional. Unknown keys are rejected.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dlw/data/dgp.hpp"
#include "dlw/error.hpp"
#include "dlw/estimators/registry.hpp"
#include "dlw/flow/fit.hpp"
#include "dlw/outcome/outcome_model.hpp"

namespace dlw::harness {

struct Grid {
    std::vector<int> settings{2};
    std::vector<Eigen::Index> d{8};
    std::vector<Eigen::Index> n{5000};
    std::vector<double> s_c{0.2};
};

struct ExperimentConfig {
    Grid grid;
    std::size_t reps = 10;
    std::uint64_t base_seed = 0;
    std::string output_dir = "results";
    std::vector<std::string> estimators{"base", "iptw", "dlw"};
    flow::FitConfig fit;
    outcome::ForestOptions forest;
    std::optional<double> weight_clip_quantile;
    std::size_t workers = 1;

    std::vector<data::DgpConfig> cells() const {
        std::vector<data::DgpConfig> out;
        for (int s : grid.settings)
            for (double sc : grid.s_c)
                for (auto d : grid.d)
                    for (auto n : grid.n) out.push_back({s, d, n, sc, 0});
        return out;
    }

    void validate() const {
        if (reps < 1) throw InvalidArgument("reps must be at least 1");
        if (workers < 1) throw InvalidArgument("workers must be at least 1");
        if (grid.settings.empty() || grid.d.empty() || grid.n.empty() || grid.s_c.empty()) {
            throw InvalidArgument("every grid axis needs at least one value");
        }
        for (const auto& c : cells()) c.validate();
        estimators::validate_estimator_names(estimators);
        fit.validate();
        if (forest.trees == 0) throw InvalidArgument("forest.trees must be positive");
        if (output_dir.empty()) throw InvalidArgument("output_dir must not be empty");
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw InvalidArgument("config section '" + section + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw InvalidArgument("unknown config key '" + section + "." + key + "'");
    }
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read_if;
    check_keys(j, "<root>", {"grid", "reps", "base_seed", "output_dir", "estimators", "fit", "forest",
                             "weight_clip_quantile", "workers"});
    ExperimentConfig cfg;
    try {
        const auto& g = j.at("grid");
        check_keys(g, "grid", {"settings", "d", "n", "s_c"});
        read_if(g, "settings", cfg.grid.settings);
        read_if(g, "d", cfg.grid.d);
        read_if(g, "n", cfg.grid.n);
        read_if(g, "s_c", cfg.grid.s_c);
        cfg.reps = j.at("reps").get<std::size_t>();
        cfg.estimators = j.at("estimators").get<std::vector<std::string>>();
        read_if(j, "base_seed", cfg.base_seed);
        read_if(j, "output_dir", cfg.output_dir);
        read_if(j, "workers", cfg.workers);
        if (j.contains("weight_clip_quantile") && !j.at("weight_clip_quantile").is_null()) {
            cfg.weight_clip_quantile = j.at("weight_clip_quantile").get<double>();
        }
        if (j.contains("fit")) {
            const auto& f = j.at("fit");
            check_keys(f, "fit", {"layers", "hidden_layers", "hidden_units", "kind", "neural_units", "batch_size", "lr",
                                  "max_epochs", "patience", "val_fraction"});
            read_if(f, "layers", cfg.fit.layers);
            read_if(f, "hidden_layers", cfg.fit.hidden_layers);
            read_if(f, "hidden_units", cfg.fit.hidden_units);
            if (f.contains("kind")) cfg.fit.kind = flow::transformer_kind_from_string(f.at("kind").get<std::string>());
            read_if(f, "neural_units", cfg.fit.neural_units);
            read_if(f, "batch_size", cfg.fit.batch_size);
            read_if(f, "lr", cfg.fit.lr);
            read_if(f, "max_epochs", cfg.fit.max_epochs);
            read_if(f, "patience", cfg.fit.patience);
            read_if(f, "val_fraction", cfg.fit.val_fraction);
        }
        if (j.contains("forest")) {
            const auto& f = j.at("forest");
            check_keys(f, "forest", {"trees", "max_depth", "bag_fraction"});
            read_if(f, "trees", cfg.forest.trees);
            read_if(f, "max_depth", cfg.forest.max_depth);
            read_if(f, "bag_fraction", cfg.forest.bag_fraction);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("invalid experiment config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
    return config_from_json(j);
}

/// Flow training settings only: either a bare "fit" object or a full experiment config.
inline flow::FitConfig load_fit_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
    nlohmann::json wrapped = {{"grid", nlohmann::json::object()}, {"reps", 1}, {"estimators", {"base"}}};
    wrapped["fit"] = j.contains("fit") ? j.at("fit") : j;
    return config_from_json(wrapped).fit;
}

} // namespace dlw::harness
