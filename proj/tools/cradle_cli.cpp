// cradle - command-line runner for cavity-array transfer experiments.

#include "cradle/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct Options {
    std::string config;
    std::string preset;
    std::string out_dir;
    std::vector<std::string> assignments;
    long long seed = -1;
    int workers = 0;
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("-c,--config", o.config, "INI configuration file or a manifest.json to replay");
    cmd->add_option("-p,--preset", o.preset, "named preset: fig2a, fig3a, fig4, fig5, fig6a, fig7");
    cmd->add_option("-o,--out-dir", o.out_dir, "output directory (overrides output.dir)");
    cmd->add_option("--seed", o.seed, "master seed (overrides numerics.seed)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--workers", o.workers, "worker threads (overrides numerics.workers)")->check(CLI::PositiveNumber);
    cmd->add_option("-s,--set", o.assignments, "override a key: section.key=value (repeatable)");
}

cradle::cfg::KeyMap layered(const Options& o) {
    using namespace cradle;
    cfg::KeyMap map;
    if (!o.preset.empty()) {
        const auto& p = exp::find_preset(o.preset);
        cfg::merge(map, p.keys);
        map["output.preset"] = p.name;
    }
    if (!o.config.empty()) {
        const std::filesystem::path path(o.config);
        if (!std::filesystem::exists(path)) throw ConfigError("configuration file " + o.config + " does not exist");
        cfg::merge(map, path.extension() == ".json" ? exp::load_manifest_config(path) : cfg::load_ini(path));
    }
    cfg::KeyMap flags;
    for (const auto& a : o.assignments) cfg::merge(flags, cfg::parse_assignment(a));
    if (!o.out_dir.empty()) flags["output.dir"] = o.out_dir;
    if (o.seed >= 0) flags["numerics.seed"] = std::to_string(o.seed);
    if (o.workers > 0) flags["numerics.workers"] = std::to_string(o.workers);
    cfg::merge(map, flags);
    return map;
}

} // namespace

int main(int argc, char** argv) {
    using namespace cradle;
    CLI::App app{"cradle: cat-state transfer through a common environment"};
    app.require_subcommand(1);
    Options opts;
    auto* run = app.add_subcommand("run", "run one simulation and write fidelity curves");
    auto* sweep = app.add_subcommand("sweep", "run every point of the [sweep] block");
    auto* coeffs = app.add_subcommand("coeffs", "tabulate F_i(t) and the long-time coefficient map");
    auto* validate = app.add_subcommand("validate", "static checks without running");
    auto* list = app.add_subcommand("presets", "list the named presets");
    for (auto* cmd : {run, sweep, coeffs, validate}) add_common(cmd, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exp::kConfigError;
    }

    try {
        if (list->parsed()) {
            for (const auto& p : exp::presets())
                std::cout << p.name << " (" << p.command << "): " << p.description << "\n";
            return exp::kOk;
        }
        const auto map = layered(opts);
        if (run->parsed()) return exp::cmd_run(map, std::cout);
        if (sweep->parsed()) return exp::cmd_sweep(map, std::cout);
        if (coeffs->parsed()) return exp::cmd_coeffs(map, std::cout);
        return exp::cmd_validate(map, std::cout);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return exp::kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return exp::kConfigError;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exp::kNumericalFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exp::kNumericalFailure;
    }
}
