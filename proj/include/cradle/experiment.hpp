// experiment.hpp - declarative runs, sweeps, coefficient maps and static validation.

#pragma once

#include "cradle/coefficients.hpp"
#include "cradle/config.hpp"
#include "cradle/dynamics.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cradle::exp {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalFailure = 3, kPartialFailure = 4 };

struct Preset {
    std::string name;
    std::string command;       // run, sweep or coeffs
    std::string description;
    cfg::KeyMap keys;
    bool reconstructed = true; // grids and horizons not stated by the source figures
};

const std::vector<Preset>& presets();
// Throws ConfigError naming the available presets.
const Preset& find_preset(const std::string& name);

fock::SystemSpec system_spec(const cfg::ExperimentConfig& c);
env::EnvKernel build_kernel(const cfg::ExperimentConfig& c);
bool uses_master(const cfg::ExperimentConfig& c);

// Long-time Im F estimate (largest over cavities) used by the horizon rule.
double long_time_coupling(const cfg::ExperimentConfig& c);
// t_max if given; otherwise max(300, 3 pi / (4 |Im F_inf|)) without direct couplings
// and 30 with them.
double horizon(const cfg::ExperimentConfig& c);

// Coefficient table on a grid of step `table_dt` up to t_max.
coeff::CoefficientTable build_coefficients(const cfg::ExperimentConfig& c, double table_dt, double t_max);

struct PointResult {
    obs::FidelityCurve fidelity;
    std::vector<std::vector<CMat>> reduced;  // [sample][cavity], lab frame
    std::vector<double> max_pair_distance;   // ensemble, N >= 3: max_t D(rho_2, rho_3) and its error
    nlohmann::json diagnostics;
    std::vector<std::filesystem::path> files;
};

// One simulation; every file is written below `dir`.
PointResult run_point(const cfg::ExperimentConfig& c, const std::filesystem::path& dir);

struct ValidationReport {
    std::vector<std::string> warnings;
    std::string solver;
    std::string recommended_solver;
    double memory_bytes = 0.0;
    double t_max = 0.0;

    bool clean() const { return warnings.empty(); }
    nlohmann::json to_json() const;
};

inline constexpr double kMemoryLimitBytes = 1e9;
inline constexpr double kMaxGammaStep = 0.125;  // largest gamma * dt without a warning

// Static checks only; nothing is propagated.
ValidationReport validate(const cfg::ExperimentConfig& c);

// Subcommands. `map` is the merged configuration; messages go to `log`.
int cmd_run(const cfg::KeyMap& map, std::ostream& log);
int cmd_sweep(const cfg::KeyMap& map, std::ostream& log);
int cmd_coeffs(const cfg::KeyMap& map, std::ostream& log);
int cmd_validate(const cfg::KeyMap& map, std::ostream& log);

// Configuration layer stored in a manifest written by a previous run.
cfg::KeyMap load_manifest_config(const std::filesystem::path& path);

} // namespace cradle::exp
