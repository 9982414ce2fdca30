// config.hpp - layered experiment configuration.
//
// A configuration is a flat map "section.key" -> text. Layers are merged in the
// order preset, file, command-line assignments; the merged map is then resolved
// into a typed ExperimentConfig. Files use INI syntax with the sections
// [system], [environment], [numerics], [sweep] and [output]. Lists are
// comma-separated.

#pragma once

#include "cradle/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cradle::cfg {

using KeyMap = std::map<std::string, std::string>;

struct KeyInfo {
    const char* name;         // "section.key"
    const char* default_value; // empty when the key has no default
    const char* help;
};

// Every accepted key, in documentation order.
const std::vector<KeyInfo>& known_keys();

// Closest known key by edit distance (empty when nothing is close).
std::string suggest_key(const std::string& key);

// Throws ConfigError for unknown keys, naming the closest known key.
void check_keys(const KeyMap& map, const std::string& origin);

// INI file -> key map; unknown sections or keys are fatal.
KeyMap load_ini(const std::filesystem::path& path);
// "section.key=value" -> single-entry map.
KeyMap parse_assignment(const std::string& text);
// Later layers win.
void merge(KeyMap& base, const KeyMap& layer);

enum class SolverChoice { automatic, master, ensemble };
enum class CoeffChoice { automatic, history, ou_fast };
enum class EnvKind { ou, markov, thermal, tabulated };

const char* to_string(SolverChoice s);
const char* to_string(CoeffChoice s);
const char* to_string(EnvKind k);

struct ExperimentConfig {
    // system
    int cavities = 2;
    std::vector<double> omegas;
    std::vector<double> lambdas;   // length cavities, last entry 0
    std::vector<double> weights;
    double alpha = 2.0;
    int initial_cavity = 1;        // one-based
    int target_cavity = 2;         // one-based, used for peak read-outs

    // environment
    EnvKind kind = EnvKind::ou;
    double gamma_big = 1.0;
    double gamma = 0.1;
    double delta = 10.0;
    double beta = 0.0;             // thermal only
    std::filesystem::path kernel_file;

    // numerics
    int cutoff = 20;
    double dt = 0.02;
    std::optional<double> t_max;   // unset: resolved from the horizon rule
    std::size_t trajectories = 200;
    std::uint64_t seed = 1;
    SolverChoice solver = SolverChoice::automatic;
    CoeffChoice coefficients = CoeffChoice::automatic;
    std::string frame = "interaction";  // interaction, rotating or lab
    int workers = 1;
    int blocks = 10;
    double sample_interval = 0.5;
    bool halving_check = false;
    int theta_grid = 256;

    // sweep
    std::string sweep_parameter;
    std::vector<double> sweep_values;
    std::vector<double> map_delta;
    std::vector<double> map_tau;

    // output
    std::filesystem::path out_dir = "cradle-out";
    std::vector<double> probes;
    bool wigner = true;
    int wigner_resolution = 121;
    bool dump_states = false;
    std::string preset;

    bool has_sweep() const { return !sweep_parameter.empty(); }
    double tau() const { return 1.0 / gamma; }
};

// Fills defaults, validates and types the merged map. Throws ConfigError.
ExperimentConfig resolve(const KeyMap& map);

// The merged map with every default made explicit (as stored in manifests).
KeyMap resolved_map(const KeyMap& map);

// Applies one swept value to a copy of the map (tau, gamma, delta, eta, lambda1,
// lambda2, Gamma, alpha, beta).
KeyMap with_sweep_value(const KeyMap& map, const std::string& parameter, double value);
const std::vector<std::string>& sweep_parameters();

std::string format_number(double v);
std::string format_list(const std::vector<double>& v);

} // namespace cradle::cfg
