#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "dlw/data/csv.hpp"
#include "dlw/data/dgp.hpp"
#include "dlw/estimators/registry.hpp"
#include "dlw/flow/fit.hpp"
#include "dlw/flow/serialize.hpp"
#include "dlw/harness/config.hpp"
#include "dlw/harness/experiment.hpp"
#include "dlw/harness/tables.hpp"
#include "dlw/harness/verify.hpp"

namespace {

using namespace dlw;

int cmd_gen(const data::DgpConfig& cfg, const std::string& out) {
    const auto ds = data::gen_setting(cfg);
    data::save_dataset_csv(out, ds);
    std::cerr << "wrote " << ds.n() << " rows (" << ds.treated().size() << " treated) to " << out << '\n';
    return 0;
}

int cmd_fit(const std::string& data_path, const std::string& group, const std::string& config_path,
            std::uint64_t seed, const std::string& out, const std::string& curve) {
    const auto ds = data::load_dataset_csv(data_path);
    flow::FitConfig fc = config_path.empty() ? flow::FitConfig{} : harness::load_fit_config(config_path);
    fc.seed = seed;
    const auto model = flow::fit(ds.group_covariates(group == "treated" ? 1 : 0), fc);
    flow::save_model(out, model);
    if (!curve.empty()) harness::emit_convergence(model, curve);
    const auto& best = model.train_log()[model.best_epoch()];
    std::cerr << "fitted " << group << " flow: " << model.train_log().size() << " epochs, best epoch "
              << model.best_epoch() << " (val NLL " << best.val_nll << ")\n";
    return 0;
}

int cmd_estimate(const std::string& data_path, const std::string& model_t, const std::string& model_c,
                 const std::string& estimator, std::uint64_t seed, bool header) {
    const auto ds = data::load_dataset_csv(data_path);
    const std::vector<std::string> names{estimator};
    estimators::EstimatorInputs in;
    in.forest.seed = seed;
    std::optional<flow::FlowModel> mt, mc;
    if (estimators::needs_flows(names)) {
        if (model_t.empty() || model_c.empty()) {
            throw InvalidArgument("estimator '" + estimator + "' needs --model-t and --model-c");
        }
        mt = flow::load_model(model_t);
        mc = flow::load_model(model_c);
        in.model_t = &*mt;
        in.model_c = &*mc;
    }
    const auto reports = estimators::run_estimators(ds, names, in);
    if (header) std::cout << estimators::EstimateReport::csv_header << '\n';
    for (const auto& r : reports) {
        std::cout << r.estimator_name << ',' << r.replication << ',' << harness::format_real(r.att_hat) << ',' << r.n1
                  << ',' << r.n0 << ',' << harness::format_real(r.weights.ess) << ','
                  << harness::format_real(r.weights.min) << ',' << harness::format_real(r.weights.max) << '\n';
    }
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& output_dir) {
    auto cfg = harness::load_experiment_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    const auto table = harness::run_experiment(cfg);
    harness::write_summary_csv(std::cout, table);
    if (harness::any_aborted(table)) {
        std::cerr << "one or more cells aborted after too many failed replications\n";
        return 1;
    }
    return 0;
}

int cmd_verify() {
    bool ok = true;
    for (const auto& c : harness::run_verify_suite()) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
        ok = ok && c.passed;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Density-ratio weighting with normalizing flows for treatment-effect estimation", "dlw"};
    app.require_subcommand(1, 1);

    data::DgpConfig gen_cfg;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset as CSV");
    gen->add_option("--setting", gen_cfg.setting, "Simulation setting (1, 2 or 3)")->required()->check(CLI::Range(1, 3));
    gen->add_option("--d", gen_cfg.d, "Covariate dimension")->required()->check(CLI::PositiveNumber);
    gen->add_option("--n", gen_cfg.n, "Sample size")->required()->check(CLI::PositiveNumber);
    gen->add_option("--sc", gen_cfg.s_c, "Confounding strength s_c")->required()->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", gen_cfg.seed, "Random seed")->required();
    gen->add_option("--out", gen_out, "Output CSV path")->required();

    std::string fit_data, fit_group, fit_config, fit_out, fit_curve;
    std::uint64_t fit_seed = 0;
    auto* fit = app.add_subcommand("fit", "Fit a flow to one treatment group's covariates");
    fit->add_option("--data", fit_data, "Dataset CSV")->required();
    fit->add_option("--group", fit_group, "Group to fit")->required()->check(CLI::IsMember({"treated", "control"}));
    fit->add_option("--config", fit_config, "JSON file with flow training settings");
    fit->add_option("--seed", fit_seed, "Random seed for initialization and batching");
    fit->add_option("--out", fit_out, "Output model path")->required();
    fit->add_option("--curve", fit_curve, "Optional CSV path for the NLL curve");

    std::string est_data, est_mt, est_mc, est_name;
    std::uint64_t est_seed = 0;
    bool est_header = false;
    auto* est = app.add_subcommand("estimate", "Print one estimate as a CSV line");
    est->add_option("--data", est_data, "Dataset CSV")->required();
    est->add_option("--model-t", est_mt, "Treated-group flow");
    est->add_option("--model-c", est_mc, "Control-group flow");
    std::vector<std::string> names(dlw::estimators::kEstimatorNames.begin(), dlw::estimators::kEstimatorNames.end());
    est->add_option("--estimator", est_name, "Estimator name")->required()->check(CLI::IsMember(names));
    est->add_option("--seed", est_seed, "Seed for the forest outcome model");
    est->add_flag("--header", est_header, "Print the CSV header first");

    std::string exp_config, exp_out;
    auto* exp = app.add_subcommand("experiment", "Run a Monte Carlo experiment from a JSON config");
    exp->add_option("--config", exp_config, "Experiment config (JSON)")->required();
    exp->add_option("--output-dir", exp_out, "Override the config's output_dir");

    auto* ver = app.add_subcommand("verify", "Run the built-in invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*gen) return cmd_gen(gen_cfg, gen_out);
        if (*fit) return cmd_fit(fit_data, fit_group, fit_config, fit_seed, fit_out, fit_curve);
        if (*est) return cmd_estimate(est_data, est_mt, est_mc, est_name, est_seed, est_header);
        if (*exp) return cmd_experiment(exp_config, exp_out);
        if (*ver) return cmd_verify();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
