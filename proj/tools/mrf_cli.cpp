// mrf: simulate datasets, build dictionaries and bases, train and apply
// networks, match, evaluate and plot.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mrf/pipeline/commands.hpp"

namespace {

namespace pl = mrf::pipeline;

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> t_trunc;
    std::optional<double> snr;
    std::optional<std::string> variant;
    std::optional<std::size_t> epochs;
};

pl::RunConfig resolve(const Overrides& o) {
    auto c = o.config.empty() ? pl::RunConfig{} : pl::load_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.t_trunc) c.sequence.t_trunc = *o.t_trunc;
    if (o.snr) c.kspace.snr_db = *o.snr;
    if (o.variant) c.network.variant = mrf::model::parse_variant(*o.variant);
    if (o.epochs) {
        c.train.epochs = *o.epochs;
        // Milestones at or past the shortened run are dropped.
        std::erase_if(c.train.milestones, [&](std::size_t m) { return m >= *o.epochs; });
    }
    c.validate();
    return c;
}

void log_line(const std::string& s) { std::cout << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Magnetic resonance fingerprinting toolkit: simulation, matching and GAST-Mamba reconstruction"};
    app.require_subcommand(1);

    Overrides ov;
    std::string out;
    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", ov.config, "Run configuration (JSON)")->check(CLI::ExistingFile); };
    auto add_out = [&](CLI::App* sub) { sub->add_option("--out", out, "Output directory")->required(); };
    auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", ov.seed, "Override the run seed"); };
    auto add_ttrunc = [&](CLI::App* sub) { sub->add_option("--t-trunc", ov.t_trunc, "Frames kept after truncation"); };

    auto* simulate = app.add_subcommand("simulate", "Simulate an aliased, projected dataset");
    add_config(simulate);
    add_seed(simulate);
    add_ttrunc(simulate);
    simulate->add_option("--snr", ov.snr, "Add complex Gaussian noise at this SNR (dB) before projection");
    add_out(simulate);

    auto* dict = app.add_subcommand("dict", "Build a Bloch dictionary");
    add_config(dict);
    add_ttrunc(dict);
    add_out(dict);

    std::string dict_dir;
    auto* basis = app.add_subcommand("basis", "Build the rank-r temporal basis");
    add_config(basis);
    add_ttrunc(basis);
    basis->add_option("--dict", dict_dir, "Dictionary directory (built from the config when omitted)")->check(CLI::ExistingDirectory);
    add_out(basis);

    std::string data_dir;
    auto* train = app.add_subcommand("train", "Train a network on a dataset");
    add_config(train);
    add_seed(train);
    train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--variant", ov.variant, "full, A1, A2, A3 or A4");
    train->add_option("--epochs", ov.epochs, "Override the epoch count");
    add_out(train);

    std::string model_dir, which = "all";
    auto* recon = app.add_subcommand("reconstruct", "Apply a trained network to a dataset");
    recon->add_option("--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
    recon->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    recon->add_option("--subset", which, "all or val");
    add_out(recon);

    auto* match = app.add_subcommand("match", "Dictionary matching on a dataset's projections");
    match->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    match->add_option("--dict", dict_dir, "Dictionary directory (built from the dataset config when omitted)")
        ->check(CLI::ExistingDirectory);
    add_out(match);

    std::vector<std::string> preds, datas, evals;
    bool plot = false;
    auto* eval = app.add_subcommand("eval", "Score predicted maps against ground truth");
    eval->add_option("--pred", preds, "Maps or dataset directory (repeatable)")->required();
    eval->add_option("--data", datas, "Ground-truth dataset directory, one per --pred")->required();
    eval->add_flag("--plot", plot, "Write metric-vs-t_trunc SVG");
    add_out(eval);

    auto* plotc = app.add_subcommand("plot", "Plot aggregate metrics against t_trunc");
    plotc->add_option("--eval", evals, "Eval directory (repeatable)")->required();
    add_out(plotc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    auto paths = [](const std::vector<std::string>& v) { return std::vector<pl::fs::path>(v.begin(), v.end()); };
    auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<pl::fs::path>(s); };

    try {
        if (*simulate) pl::cmd_simulate(resolve(ov), out, log_line);
        else if (*dict) pl::cmd_dict(resolve(ov), out, log_line);
        else if (*basis) pl::cmd_basis(resolve(ov), opt_path(dict_dir), out, log_line);
        else if (*train) pl::cmd_train(resolve(ov), data_dir, out, log_line);
        else if (*recon) pl::cmd_reconstruct(model_dir, data_dir, which, out, log_line);
        else if (*match) pl::cmd_match(data_dir, opt_path(dict_dir), out, log_line);
        else if (*eval) pl::cmd_eval(paths(preds), paths(datas), plot, out, log_line);
        else if (*plotc) pl::cmd_plot(paths(evals), out, log_line);
    } catch (const mrf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const mrf::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const mrf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInternal;
    }
    return kOk;
}
