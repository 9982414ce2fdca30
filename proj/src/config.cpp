#include "cradle/config.hpp"

#include "cradle/fock.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace cradle::cfg {

const std::vector<KeyInfo>& known_keys() {
    static const std::vector<KeyInfo> keys = {
        {"system.cavities", "2", "number of cavities N"},
        {"system.omega", "1", "cavity frequencies (one value or N values)"},
        {"system.lambda", "0", "nearest-neighbour couplings (one value or N-1 values)"},
        {"system.weights", "", "environment weights l_i (default all 1)"},
        {"system.eta", "", "asymmetry (l3-l2)/(l2+l3) for N=3; sets weights (1, 1-eta, 1+eta)"},
        {"system.alpha", "2", "cat amplitude"},
        {"system.initial_cavity", "1", "cavity holding the initial cat (1-based)"},
        {"system.target_cavity", "", "cavity whose fidelity peak is reported (default N)"},
        {"environment.kind", "ou", "ou | markov | thermal | tabulated"},
        {"environment.Gamma", "1", "global dissipation rate"},
        {"environment.gamma", "0.1", "inverse memory time (exclusive with tau)"},
        {"environment.tau", "", "memory time 1/gamma (exclusive with gamma)"},
        {"environment.delta", "10", "central frequency of the spectrum"},
        {"environment.beta", "", "inverse temperature (thermal only)"},
        {"environment.kernel_file", "", "CSV kernel table (tabulated only)"},
        {"numerics.cutoff", "20", "Fock cutoff N_c per cavity"},
        {"numerics.dt", "0.02", "propagation step"},
        {"numerics.t_max", "auto", "horizon; auto applies the default horizon rule"},
        {"numerics.trajectories", "200", "ensemble size"},
        {"numerics.seed", "1", "master seed"},
        {"numerics.solver", "auto", "auto | master | ensemble"},
        {"numerics.coefficients", "auto", "auto | history | ou-fast"},
        {"numerics.frame", "interaction", "interaction | rotating | lab"},
        {"numerics.workers", "1", "worker threads"},
        {"numerics.blocks", "10", "ensemble blocks for jackknife errors"},
        {"numerics.sample_interval", "0.5", "time between recorded samples"},
        {"numerics.halving_check", "false", "repeat master runs at dt/2 and compare"},
        {"numerics.theta_grid", "256", "coarse grid for the fidelity phase search"},
        {"sweep.parameter", "", "tau | gamma | delta | eta | lambda1 | lambda2 | Gamma | alpha | beta"},
        {"sweep.values", "", "explicit sweep values"},
        {"sweep.start", "", "first value of a uniform sweep"},
        {"sweep.stop", "", "last value of a uniform sweep"},
        {"sweep.count", "", "number of values of a uniform sweep"},
        {"sweep.map_delta", "", "delta axis of the long-time coefficient map"},
        {"sweep.map_tau", "", "tau axis of the long-time coefficient map"},
        {"output.dir", "cradle-out", "output directory"},
        {"output.probes", "", "times at which full states are recorded"},
        {"output.wigner", "true", "write Wigner grids at the target fidelity peak"},
        {"output.wigner_resolution", "121", "Wigner grid points per axis"},
        {"output.dump_states", "false", "write binary states at the probe times"},
        {"output.preset", "", "preset the configuration started from"},
    };
    return keys;
}

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

bool is_known(const std::string& key) {
    const auto& keys = known_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const KeyInfo& k) { return key == k.name; });
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

double to_double(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) bad_value(key, text, "a number");
    return v;
}

long long to_int(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) bad_value(key, text, "an integer");
    return v;
}

bool to_bool(const std::string& key, const std::string& text) {
    const std::string t = lower(trim(text));
    if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
    if (t == "false" || t == "no" || t == "off" || t == "0") return false;
    bad_value(key, text, "true or false");
}

std::vector<double> to_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (trim(item).empty()) bad_value(key, text, "a comma-separated list of numbers");
        out.push_back(to_double(key, item));
    }
    return out;
}

class Reader {
public:
    explicit Reader(const KeyMap& m) : map_(m) {}

    std::optional<std::string> raw(const std::string& key) const {
        const auto it = map_.find(key);
        if (it == map_.end() || trim(it->second).empty()) return std::nullopt;
        return trim(it->second);
    }
    bool has(const std::string& key) const { return raw(key).has_value(); }
    std::string text(const std::string& key, const std::string& fallback) const { return raw(key).value_or(fallback); }
    double number(const std::string& key, double fallback) const {
        const auto r = raw(key);
        return r ? to_double(key, *r) : fallback;
    }
    long long integer(const std::string& key, long long fallback) const {
        const auto r = raw(key);
        return r ? to_int(key, *r) : fallback;
    }
    bool flag(const std::string& key, bool fallback) const {
        const auto r = raw(key);
        return r ? to_bool(key, *r) : fallback;
    }
    std::vector<double> list(const std::string& key) const {
        const auto r = raw(key);
        return r ? to_list(key, *r) : std::vector<double>{};
    }

private:
    const KeyMap& map_;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

// Pairs of keys where setting one in a later layer clears the other.
const std::vector<std::pair<std::string, std::string>>& exclusive_pairs() {
    static const std::vector<std::pair<std::string, std::string>> pairs = {
        {"environment.gamma", "environment.tau"},
        {"system.weights", "system.eta"},
        {"sweep.values", "sweep.start"},
        {"sweep.values", "sweep.stop"},
        {"sweep.values", "sweep.count"},
    };
    return pairs;
}

} // namespace

std::string suggest_key(const std::string& key) {
    std::string best;
    std::size_t best_d = std::string::npos, best_exact = std::string::npos;
    for (const auto& k : known_keys()) {
        const std::string name = k.name;
        std::size_t d = edit_distance(lower(key), lower(name));
        std::size_t exact = edit_distance(key, name);
        // Also compare the bare key against the key part of each name.
        const auto dot = name.find('.');
        if (key.find('.') == std::string::npos && dot != std::string::npos) {
            d = std::min(d, edit_distance(lower(key), lower(name.substr(dot + 1))));
            exact = std::min(exact, edit_distance(key, name.substr(dot + 1)));
        }
        // Case-insensitive distance first; ties go to the case-exact match (gamma vs Gamma).
        if (d < best_d || (d == best_d && exact < best_exact)) {
            best_d = d;
            best_exact = exact;
            best = name;
        }
    }
    return best_d <= std::max<std::size_t>(3, key.size() / 3) ? best : std::string{};
}

void check_keys(const KeyMap& map, const std::string& origin) {
    for (const auto& [key, value] : map) {
        (void)value;
        if (is_known(key)) continue;
        std::string msg = "unknown configuration key '" + key + "' in " + origin;
        const std::string s = suggest_key(key);
        if (!s.empty()) msg += "; did you mean '" + s + "'?";
        throw ConfigError(msg);
    }
}

KeyMap load_ini(const std::filesystem::path& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::ini_parser::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.message() + " (line " +
                          std::to_string(e.line()) + ")");
    }
    static const std::set<std::string> sections = {"system", "environment", "numerics", "sweep", "output"};
    KeyMap map;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            std::string msg = "key '" + section + "' in " + path.string() + " is outside any section";
            const std::string s = suggest_key(section);
            if (!s.empty()) msg += "; did you mean '" + s + "'?";
            throw ConfigError(msg);
        }
        if (!sections.count(section))
            throw ConfigError("unknown section [" + section + "] in " + path.string() +
                              " (expected system, environment, numerics, sweep or output)");
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            if (map.count(full)) throw ConfigError("duplicate key " + full + " in " + path.string());
            map[full] = value.data();
        }
    }
    check_keys(map, path.string());
    for (const auto& [a, b] : exclusive_pairs())
        if (map.count(a) && map.count(b))
            throw ConfigError(a + " and " + b + " are mutually exclusive (" + path.string() + ")");
    return map;
}

KeyMap parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected section.key=value, got '" + text + "'");
    KeyMap m{{trim(text.substr(0, eq)), trim(text.substr(eq + 1))}};
    check_keys(m, "command line");
    return m;
}

void merge(KeyMap& base, const KeyMap& layer) {
    for (const auto& [a, b] : exclusive_pairs()) {
        if (layer.count(a)) base.erase(b);
        if (layer.count(b)) base.erase(a);
    }
    for (const auto& [k, v] : layer) base[k] = v;
}

const char* to_string(SolverChoice s) {
    switch (s) {
    case SolverChoice::master: return "master";
    case SolverChoice::ensemble: return "ensemble";
    default: return "auto";
    }
}

const char* to_string(CoeffChoice s) {
    switch (s) {
    case CoeffChoice::history: return "history";
    case CoeffChoice::ou_fast: return "ou-fast";
    default: return "auto";
    }
}

const char* to_string(EnvKind k) {
    switch (k) {
    case EnvKind::markov: return "markov";
    case EnvKind::thermal: return "thermal";
    case EnvKind::tabulated: return "tabulated";
    default: return "ou";
    }
}

const std::vector<std::string>& sweep_parameters() {
    static const std::vector<std::string> p = {"tau",     "gamma",   "delta", "eta",  "lambda1",
                                               "lambda2", "Gamma",   "alpha", "beta"};
    return p;
}

std::string format_number(double v) {
    // Shortest representation that round-trips.
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string format_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_number(v[i]);
    }
    return out;
}

ExperimentConfig resolve(const KeyMap& map) {
    check_keys(map, "configuration");
    for (const auto& [a, b] : exclusive_pairs()) {
        const auto ia = map.find(a), ib = map.find(b);
        if (ia != map.end() && ib != map.end() && !trim(ia->second).empty() && !trim(ib->second).empty())
            throw ConfigError(a + " and " + b + " are mutually exclusive");
    }
    const Reader r(map);
    ExperimentConfig c;

    c.cavities = static_cast<int>(r.integer("system.cavities", 2));
    require(c.cavities >= 1 && c.cavities <= 6, "system.cavities must be between 1 and 6");
    const auto N = static_cast<std::size_t>(c.cavities);

    auto omegas = r.list("system.omega");
    if (omegas.empty()) omegas = {1.0};
    if (omegas.size() == 1) omegas.assign(N, omegas[0]);
    require(omegas.size() == N, "system.omega needs 1 or " + std::to_string(N) + " values");
    c.omegas = omegas;

    auto lambdas = r.list("system.lambda");
    if (lambdas.empty()) lambdas = {0.0};
    if (lambdas.size() == 1 && N > 1) lambdas.assign(N - 1, lambdas[0]);
    if (lambdas.size() == N && N > 0 && lambdas.back() == 0.0) lambdas.pop_back();
    if (N == 1) lambdas.clear();
    require(lambdas.size() == N - 1, "system.lambda needs 1 or " + std::to_string(N - 1) + " values");
    lambdas.push_back(0.0);
    c.lambdas = lambdas;

    if (r.has("system.eta")) {
        require(N == 3, "system.eta requires three cavities");
        const double eta = r.number("system.eta", 0.0);
        require(std::abs(eta) < 1.0, "system.eta must lie in (-1, 1)");
        c.weights = fock::weights_for_asymmetry(eta);
    } else {
        c.weights = r.list("system.weights");
        if (c.weights.empty()) c.weights.assign(N, 1.0);
        require(c.weights.size() == N, "system.weights needs " + std::to_string(N) + " values");
    }

    c.alpha = r.number("system.alpha", 2.0);
    require(c.alpha > 0.0, "system.alpha must be positive");
    c.initial_cavity = static_cast<int>(r.integer("system.initial_cavity", 1));
    c.target_cavity = static_cast<int>(r.integer("system.target_cavity", c.cavities));
    require(c.initial_cavity >= 1 && c.initial_cavity <= c.cavities, "system.initial_cavity out of range");
    require(c.target_cavity >= 1 && c.target_cavity <= c.cavities, "system.target_cavity out of range");

    const std::string kind = lower(r.text("environment.kind", "ou"));
    if (kind == "ou") c.kind = EnvKind::ou;
    else if (kind == "markov" || kind == "markovian") c.kind = EnvKind::markov;
    else if (kind == "thermal") c.kind = EnvKind::thermal;
    else if (kind == "tabulated") c.kind = EnvKind::tabulated;
    else bad_value("environment.kind", kind, "ou, markov, thermal or tabulated");

    c.gamma_big = r.number("environment.Gamma", 1.0);
    require(c.gamma_big >= 0.0, "environment.Gamma must be nonnegative");
    if (r.has("environment.tau")) {
        const double tau = r.number("environment.tau", 10.0);
        require(tau > 0.0, "environment.tau must be positive");
        c.gamma = 1.0 / tau;
    } else {
        c.gamma = r.number("environment.gamma", 0.1);
    }
    require(c.gamma > 0.0, "environment.gamma must be positive");
    c.delta = r.number("environment.delta", 10.0);
    if (c.kind == EnvKind::thermal) {
        require(r.has("environment.beta"), "environment.beta is required for thermal environments");
        c.beta = r.number("environment.beta", 0.0);
        require(c.beta > 0.0, "environment.beta must be positive");
    } else {
        require(!r.has("environment.beta"), "environment.beta only applies to thermal environments");
    }
    c.kernel_file = r.text("environment.kernel_file", "");
    require(c.kind != EnvKind::tabulated || !c.kernel_file.empty(),
            "environment.kernel_file is required for tabulated environments");

    c.cutoff = static_cast<int>(r.integer("numerics.cutoff", 20));
    require(c.cutoff >= 2, "numerics.cutoff must be at least 2");
    c.dt = r.number("numerics.dt", 0.02);
    require(c.dt > 0.0, "numerics.dt must be positive");
    const std::string tmax = lower(r.text("numerics.t_max", "auto"));
    if (tmax != "auto") {
        c.t_max = to_double("numerics.t_max", tmax);
        require(*c.t_max > 0.0, "numerics.t_max must be positive");
    }
    const long long traj = r.integer("numerics.trajectories", 200);
    require(traj >= 2, "numerics.trajectories must be at least 2");
    c.trajectories = static_cast<std::size_t>(traj);
    const long long seed = r.integer("numerics.seed", 1);
    require(seed >= 0, "numerics.seed must be nonnegative");
    c.seed = static_cast<std::uint64_t>(seed);

    const std::string solver = lower(r.text("numerics.solver", "auto"));
    if (solver == "auto") c.solver = SolverChoice::automatic;
    else if (solver == "master") c.solver = SolverChoice::master;
    else if (solver == "ensemble") c.solver = SolverChoice::ensemble;
    else bad_value("numerics.solver", solver, "auto, master or ensemble");

    const std::string coeffs = lower(r.text("numerics.coefficients", "auto"));
    if (coeffs == "auto") c.coefficients = CoeffChoice::automatic;
    else if (coeffs == "history") c.coefficients = CoeffChoice::history;
    else if (coeffs == "ou-fast") c.coefficients = CoeffChoice::ou_fast;
    else bad_value("numerics.coefficients", coeffs, "auto, history or ou-fast");
    require(c.coefficients != CoeffChoice::ou_fast || c.kind == EnvKind::ou,
            "numerics.coefficients=ou-fast requires environment.kind=ou");

    c.frame = lower(r.text("numerics.frame", "interaction"));
    if (c.frame != "interaction" && c.frame != "rotating" && c.frame != "lab")
        bad_value("numerics.frame", c.frame, "interaction, rotating or lab");

    c.workers = static_cast<int>(r.integer("numerics.workers", 1));
    require(c.workers >= 1, "numerics.workers must be positive");
    c.blocks = static_cast<int>(r.integer("numerics.blocks", 10));
    require(c.blocks >= 2, "numerics.blocks must be at least 2");
    require(static_cast<std::size_t>(c.blocks) <= c.trajectories, "numerics.blocks exceeds numerics.trajectories");
    c.sample_interval = r.number("numerics.sample_interval", 0.5);
    require(c.sample_interval > 0.0, "numerics.sample_interval must be positive");
    c.halving_check = r.flag("numerics.halving_check", false);
    c.theta_grid = static_cast<int>(r.integer("numerics.theta_grid", 256));
    require(c.theta_grid >= 16, "numerics.theta_grid must be at least 16");

    c.sweep_parameter = r.text("sweep.parameter", "");
    if (!c.sweep_parameter.empty()) {
        const auto& p = sweep_parameters();
        if (std::find(p.begin(), p.end(), c.sweep_parameter) == p.end()) {
            std::string all;
            for (const auto& s : p) all += (all.empty() ? "" : ", ") + s;
            bad_value("sweep.parameter", c.sweep_parameter, all);
        }
        if (r.has("sweep.values")) {
            c.sweep_values = r.list("sweep.values");
        } else {
            require(r.has("sweep.start") && r.has("sweep.stop") && r.has("sweep.count"),
                    "a sweep needs sweep.values or sweep.start, sweep.stop and sweep.count");
            const double a = r.number("sweep.start", 0.0), b = r.number("sweep.stop", 0.0);
            const long long n = r.integer("sweep.count", 0);
            require(n >= 1, "sweep.count must be positive");
            for (long long i = 0; i < n; ++i)
                c.sweep_values.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
        }
        require(!c.sweep_values.empty(), "sweep.values is empty");
    } else {
        require(!r.has("sweep.values") && !r.has("sweep.start"), "sweep values given without sweep.parameter");
    }
    c.map_delta = r.list("sweep.map_delta");
    c.map_tau = r.list("sweep.map_tau");
    require(c.map_delta.empty() == c.map_tau.empty(), "sweep.map_delta and sweep.map_tau must be given together");
    for (double t : c.map_tau) require(t > 0.0, "sweep.map_tau values must be positive");

    c.out_dir = r.text("output.dir", "cradle-out");
    c.probes = r.list("output.probes");
    for (double t : c.probes) require(t >= 0.0, "output.probes must be nonnegative");
    c.wigner = r.flag("output.wigner", true);
    c.wigner_resolution = static_cast<int>(r.integer("output.wigner_resolution", 121));
    require(c.wigner_resolution >= 11, "output.wigner_resolution must be at least 11");
    c.dump_states = r.flag("output.dump_states", false);
    c.preset = r.text("output.preset", "");
    return c;
}

KeyMap resolved_map(const KeyMap& map) {
    const ExperimentConfig c = resolve(map);
    KeyMap m;
    m["system.cavities"] = std::to_string(c.cavities);
    m["system.omega"] = format_list(c.omegas);
    m["system.lambda"] = format_list(std::vector<double>(c.lambdas.begin(), c.lambdas.end() - 1));
    m["system.weights"] = format_list(c.weights);
    if (map.count("system.eta")) m["system.eta"] = trim(map.at("system.eta"));
    m["system.alpha"] = format_number(c.alpha);
    m["system.initial_cavity"] = std::to_string(c.initial_cavity);
    m["system.target_cavity"] = std::to_string(c.target_cavity);
    m["environment.kind"] = to_string(c.kind);
    m["environment.Gamma"] = format_number(c.gamma_big);
    if (map.count("environment.tau")) m["environment.tau"] = trim(map.at("environment.tau"));
    m["environment.gamma"] = format_number(c.gamma);
    m["environment.delta"] = format_number(c.delta);
    if (c.kind == EnvKind::thermal) m["environment.beta"] = format_number(c.beta);
    if (!c.kernel_file.empty()) m["environment.kernel_file"] = c.kernel_file.string();
    m["numerics.cutoff"] = std::to_string(c.cutoff);
    m["numerics.dt"] = format_number(c.dt);
    m["numerics.t_max"] = c.t_max ? format_number(*c.t_max) : "auto";
    m["numerics.trajectories"] = std::to_string(c.trajectories);
    m["numerics.seed"] = std::to_string(c.seed);
    m["numerics.solver"] = to_string(c.solver);
    m["numerics.coefficients"] = to_string(c.coefficients);
    m["numerics.frame"] = c.frame;
    m["numerics.workers"] = std::to_string(c.workers);
    m["numerics.blocks"] = std::to_string(c.blocks);
    m["numerics.sample_interval"] = format_number(c.sample_interval);
    m["numerics.halving_check"] = c.halving_check ? "true" : "false";
    m["numerics.theta_grid"] = std::to_string(c.theta_grid);
    if (c.has_sweep()) {
        m["sweep.parameter"] = c.sweep_parameter;
        m["sweep.values"] = format_list(c.sweep_values);
    }
    if (!c.map_delta.empty()) {
        m["sweep.map_delta"] = format_list(c.map_delta);
        m["sweep.map_tau"] = format_list(c.map_tau);
    }
    m["output.dir"] = c.out_dir.string();
    if (!c.probes.empty()) m["output.probes"] = format_list(c.probes);
    m["output.wigner"] = c.wigner ? "true" : "false";
    m["output.wigner_resolution"] = std::to_string(c.wigner_resolution);
    m["output.dump_states"] = c.dump_states ? "true" : "false";
    if (!c.preset.empty()) m["output.preset"] = c.preset;
    // eta and tau are recorded as given; drop the derived partner to keep the map loadable.
    if (m.count("system.eta")) m.erase("system.weights");
    if (m.count("environment.tau")) m.erase("environment.gamma");
    return m;
}

KeyMap with_sweep_value(const KeyMap& map, const std::string& parameter, double value) {
    KeyMap m = map;
    const std::string v = format_number(value);
    KeyMap layer;
    if (parameter == "tau") layer["environment.tau"] = v;
    else if (parameter == "gamma") layer["environment.gamma"] = v;
    else if (parameter == "delta") layer["environment.delta"] = v;
    else if (parameter == "Gamma") layer["environment.Gamma"] = v;
    else if (parameter == "beta") layer["environment.beta"] = v;
    else if (parameter == "alpha") layer["system.alpha"] = v;
    else if (parameter == "eta") layer["system.eta"] = v;
    else if (parameter == "lambda1" || parameter == "lambda2") {
        const ExperimentConfig c = resolve(map);
        const std::size_t idx = parameter == "lambda1" ? 0 : 1;
        require(idx + 1 < c.lambdas.size(), parameter + " needs at least " + std::to_string(idx + 2) + " cavities");
        std::vector<double> l(c.lambdas.begin(), c.lambdas.end() - 1);
        l[idx] = value;
        layer["system.lambda"] = format_list(l);
    } else {
        throw ConfigError("unknown sweep parameter '" + parameter + "'");
    }
    merge(m, layer);
    m.erase("sweep.parameter");
    m.erase("sweep.values");
    m.erase("sweep.start");
    m.erase("sweep.stop");
    m.erase("sweep.count");
    return m;
}

} // namespace cradle::cfg
