#include "cradle/experiment.hpp"

#include "cradle/io.hpp"
#include "cradle/thermal.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

namespace cradle::exp {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<Preset>& presets() {
    static const std::vector<Preset> all = {
        {"fig2a", "sweep", "two cavities without direct coupling, memory-time sweep",
         {{"system.cavities", "2"}, {"system.lambda", "0"}, {"system.alpha", "2"},
          {"environment.kind", "ou"}, {"environment.Gamma", "1"}, {"environment.delta", "10"},
          {"numerics.cutoff", "20"}, {"numerics.dt", "0.05"}, {"numerics.solver", "master"},
          {"sweep.parameter", "tau"}, {"sweep.values", "0.05,0.5,1,2.5,5,10"}}},
        {"fig3a", "sweep", "two cavities without direct coupling, central-frequency sweep at gamma = 0.3",
         {{"system.cavities", "2"}, {"system.lambda", "0"}, {"system.alpha", "2"},
          {"environment.kind", "ou"}, {"environment.Gamma", "1"}, {"environment.gamma", "0.3"},
          {"numerics.cutoff", "20"}, {"numerics.dt", "0.05"}, {"numerics.solver", "master"},
          {"sweep.parameter", "delta"}, {"sweep.values", "0,2.5,5,7.5,10"}}},
        {"fig4", "coeffs", "long-time Re F, Im F and Im F / Re F over a delta x tau grid",
         {{"system.cavities", "2"}, {"system.lambda", "0"}, {"environment.kind", "ou"},
          {"environment.Gamma", "1"}, {"environment.gamma", "0.1"}, {"environment.delta", "10"},
          {"numerics.dt", "0.01"}, {"sweep.map_delta", "0,2.5,5,7.5,10"},
          {"sweep.map_tau", "0.1,0.5,1,2.5,5"}}},
        {"fig5", "sweep", "three cavities without direct coupling, asymmetry sweep",
         {{"system.cavities", "3"}, {"system.lambda", "0"}, {"system.alpha", "2"},
          {"environment.kind", "ou"}, {"environment.Gamma", "1"}, {"environment.gamma", "0.1"},
          {"environment.delta", "5"}, {"numerics.cutoff", "14"}, {"numerics.dt", "0.05"},
          {"numerics.solver", "ensemble"}, {"numerics.trajectories", "200"},
          {"sweep.parameter", "eta"}, {"sweep.values", "0,0.1,0.25,0.5,0.75"}}},
        {"fig6a", "sweep", "three cavities with lambda1 = lambda2 = 1, memory-time sweep",
         {{"system.cavities", "3"}, {"system.lambda", "1,1"}, {"system.alpha", "2"},
          {"environment.kind", "ou"}, {"environment.Gamma", "1"}, {"environment.delta", "0"},
          {"numerics.cutoff", "10"}, {"numerics.dt", "0.025"}, {"numerics.solver", "master"},
          {"numerics.t_max", "40"}, {"sweep.parameter", "tau"}, {"sweep.values", "0.25,0.5,1,2,3,5"}}},
        {"fig7", "sweep", "three cavities, lambda1 sweep at lambda2 = 1",
         {{"system.cavities", "3"}, {"system.lambda", "1,1"}, {"system.alpha", "2"},
          {"environment.kind", "ou"}, {"environment.Gamma", "1"}, {"environment.tau", "3"},
          {"environment.delta", "0"}, {"numerics.cutoff", "10"}, {"numerics.dt", "0.025"},
          {"numerics.solver", "master"}, {"sweep.parameter", "lambda1"}, {"sweep.start", "0.25"},
          {"sweep.stop", "3.25"}, {"sweep.count", "13"}}},
    };
    return all;
}

const Preset& find_preset(const std::string& name) {
    std::string names;
    for (const auto& p : presets()) {
        if (p.name == name) return p;
        names += (names.empty() ? "" : ", ") + p.name;
    }
    throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
}

fock::SystemSpec system_spec(const cfg::ExperimentConfig& c) {
    fock::SystemSpec s{c.omegas, c.lambdas, c.weights};
    s.validate();
    return s;
}

env::EnvKernel build_kernel(const cfg::ExperimentConfig& c) {
    switch (c.kind) {
    case cfg::EnvKind::ou: return env::ou_kernel({c.gamma_big, c.gamma, c.delta});
    case cfg::EnvKind::markov: return env::markovian_kernel(c.gamma_big);
    case cfg::EnvKind::tabulated: return env::load_kernel_csv(c.kernel_file);
    case cfg::EnvKind::thermal:
        throw ConfigError("thermal environments only support the coeffs command");
    }
    throw ConfigError("unsupported environment kind");
}

bool uses_master(const cfg::ExperimentConfig& c) {
    switch (c.solver) {
    case cfg::SolverChoice::master: return true;
    case cfg::SolverChoice::ensemble: return false;
    default: return c.cavities <= 2;
    }
}

namespace {

bool has_direct_coupling(const cfg::ExperimentConfig& c) {
    return std::any_of(c.lambdas.begin(), c.lambdas.end(), [](double l) { return l != 0.0; });
}

std::size_t steps_for(double t_max, double dt) { return static_cast<std::size_t>(std::llround(t_max / dt)); }

// Snap t_max to a whole number of steps.
double snapped(double t_max, double dt) { return dt * static_cast<double>(std::max<std::size_t>(1, steps_for(t_max, dt))); }

std::size_t stride_for(const cfg::ExperimentConfig& c) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(c.sample_interval / c.dt)));
}

std::string stamp(double t) {
    std::string s = cfg::format_number(t);
    std::replace(s.begin(), s.end(), '.', 'p');
    return s;
}

json monitors_json(const dyn::Monitors& m) {
    return {{"max_trace_drift", m.max_trace_drift},       {"max_hermiticity_residual", m.max_hermiticity},
            {"min_eigenvalue", m.min_eigenvalue},         {"max_top_level_population", m.max_top_population},
            {"initial_purity", m.initial_purity},         {"max_purity_change", m.max_purity_change}};
}

json file_list(const std::vector<fs::path>& files, const fs::path& root) {
    json out = json::array();
    for (const auto& f : files)
        out.push_back({{"path", fs::relative(f, root).generic_string()},
                       {"sha256", io::sha256_file(f)},
                       {"bytes", fs::file_size(f)}});
    return out;
}

json config_json(const cfg::KeyMap& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

void write_manifest(const fs::path& dir, const std::string& command, const cfg::KeyMap& resolved,
                    double wall, const json& runs, const std::vector<fs::path>& files, int status) {
    const auto preset_it = resolved.find("output.preset");
    json m;
    m["schema"] = "cradle.manifest.v" + std::to_string(io::kSchemaVersion);
    m["software"] = {{"name", "cradle"}, {"version", kVersion}};
    m["command"] = command;
    if (preset_it != resolved.end()) {
        m["preset"] = preset_it->second;
        m["reconstructed_grid"] = find_preset(preset_it->second).reconstructed;
    }
    m["config"] = config_json(resolved);
    m["wall_time_seconds"] = wall;
    m["runs"] = runs;
    m["files"] = file_list(files, dir);
    m["exit_code"] = status;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

double long_time_coupling(const cfg::ExperimentConfig& c) {
    if (c.kind != cfg::EnvKind::ou) return 0.0;
    const auto spec = system_spec(c);
    const double horizon = std::max(60.0, 40.0 / c.gamma);
    const double dt = std::min(0.01, 0.1 / std::max({c.gamma, std::abs(c.delta), 1.0}));
    const auto table = coeff::solve_F_ou_fast(spec, {c.gamma_big, c.gamma, c.delta}, dt, horizon);
    const auto ratio = coeff::effective_coupling_ratio(table);
    double im = 0.0;
    for (double v : ratio.im) im = std::max(im, std::abs(v));
    return im;
}

double horizon(const cfg::ExperimentConfig& c) {
    if (c.t_max) return snapped(*c.t_max, c.dt);
    if (has_direct_coupling(c)) return snapped(30.0, c.dt);
    const double im = long_time_coupling(c);
    const double rule = im > 1e-12 ? 3.0 * kPi / (4.0 * im) : 0.0;
    return snapped(std::max(300.0, rule), c.dt);
}

coeff::CoefficientTable build_coefficients(const cfg::ExperimentConfig& c, double table_dt, double t_max) {
    const auto spec = system_spec(c);
    const auto kernel = build_kernel(c);
    if (kernel.is_delta()) return coeff::markov_coefficients(spec, c.gamma_big, table_dt, t_max);
    const bool fast = kernel.kind() == env::KernelKind::ou && c.coefficients != cfg::CoeffChoice::history;
    if (fast) return coeff::solve_F_ou_fast(spec, kernel.lorentz(), table_dt, t_max);
    return coeff::solve_f_history(spec, kernel, table_dt, t_max).table;
}

PointResult run_point(const cfg::ExperimentConfig& c, const fs::path& dir) {
    if (c.kind == cfg::EnvKind::thermal)
        throw ConfigError("finite-temperature propagation is not supported; use the coeffs command");
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    const auto spec = system_spec(c);
    const fock::FockSpace space(c.cavities, c.cutoff);
    const double t_max = horizon(c);
    // The table carries every RK4 stage time as a node.
    const auto table = build_coefficients(c, 0.5 * c.dt, t_max);
    const cplx alpha{c.alpha, 0.0};
    const auto psi0 = dyn::default_initial_state(space, alpha, c.initial_cavity - 1);
    const bool master = uses_master(c);

    PointResult res;
    json d;
    d["solver"] = master ? "master" : "ensemble";
    d["t_max"] = t_max;
    d["dt"] = c.dt;
    d["coefficient_provenance"] = coeff::to_string(table.provenance);
    d["cutoff_check"] = {{"recommended", fock::check_cutoff(c.cutoff, alpha).recommended},
                         {"tail_mass", fock::check_cutoff(c.cutoff, alpha).tail_mass}};

    std::vector<double> probes;
    for (double p : c.probes)
        if (p <= t_max + 1e-12) probes.push_back(p);
    std::vector<double> probe_times;
    std::vector<CMat> probe_states;

    if (master) {
        dyn::MasterOptions o;
        o.dt = c.dt;
        o.t_max = t_max;
        o.sample_stride = stride_for(c);
        o.probe_times = probes;
        o.frame = dyn::frame_from_string(c.frame);
        o.alpha = alpha;
        o.theta_grid = c.theta_grid;
        o.halving_check = c.halving_check;
        o.check_mode = c.target_cavity - 1;
        const auto rho0 = fock::projector(psi0).matrix;
        auto run = dyn::run_master(spec, space, rho0, table, o);
        d["steps"] = run.steps;
        d["monitors"] = monitors_json(run.monitors);
        if (run.halving.performed)
            d["halving_check"] = {{"cavity", run.halving.mode + 1},
                                  {"sup_change", run.halving.sup_change},
                                  {"tolerance", run.halving.tolerance},
                                  {"passed", run.halving.passed}};
        res.fidelity = std::move(run.fidelity);
        res.reduced = std::move(run.reduced);
        probe_times = std::move(run.probe_times);
        probe_states = std::move(run.probe_states);
    } else {
        dyn::EnsembleOptions o;
        o.dt = c.dt;
        o.t_max = t_max;
        o.sample_stride = stride_for(c);
        o.probe_times = probes;
        o.frame = dyn::frame_from_string(c.frame);
        o.alpha = alpha;
        o.theta_grid = c.theta_grid;
        o.trajectories = c.trajectories;
        o.seed = c.seed;
        o.blocks = c.blocks;
        o.workers = c.workers;
        o.record_full = !probes.empty();
        const auto noise = dyn::NoiseModel::from_kernel(build_kernel(c));
        auto run = dyn::run_ensemble(spec, space, psi0.amplitudes, table, noise, o);
        d["steps"] = run.steps;
        d["trajectories"] = run.trajectories;
        d["seed"] = c.seed;
        d["monitors"] = monitors_json(run.monitors);
        double worst_trace = 0.0;
        for (std::size_t s = 0; s < run.trace_mean.size(); ++s)
            worst_trace = std::max(worst_trace, std::abs(run.trace_mean[s] - 1.0) /
                                                    std::max(run.trace_error[s], 1e-300));
        d["max_trace_deviation_in_errors"] = worst_trace;
        d["max_norm_squared"] = run.max_norm;
        if (c.cavities >= 3) {
            // Distance between the reduced states of cavities 2 and 3, with its jackknife error.
            double worst = 0.0, err = 0.0, worst_t = 0.0;
            for (std::size_t s = 0; s < run.sample_times.size(); ++s) {
                const double dist = obs::trace_distance(run.reduced[s][1], run.reduced[s][2]);
                if (dist >= worst) {
                    std::vector<CMat> diff;
                    for (const auto& b : run.reduced_blocks) diff.push_back(b[s][1] - b[s][2]);
                    worst = dist;
                    worst_t = run.sample_times[s];
                    err = dyn::jackknife_trace_error(diff, run.block_sizes);
                }
            }
            res.max_pair_distance = {worst, err};
            d["cavity23_distance"] = {{"max", worst}, {"at", worst_t}, {"jackknife_error", err}};
        }
        const auto peak = run.fidelity.argmax(c.target_cavity - 1);
        d["target_fidelity_error_at_peak"] = run.fidelity_error[static_cast<std::size_t>(c.target_cavity - 1)][peak];
        res.fidelity = std::move(run.fidelity);
        res.reduced = std::move(run.reduced);
        probe_times = std::move(run.probe_times);
        probe_states = std::move(run.probe_mean);
    }

    const fs::path fid_path = dir / "fidelity.csv";
    obs::save_fidelity_csv(fid_path, res.fidelity);
    res.files.push_back(fid_path);
    const fs::path coeff_path = dir / "coefficients.csv";
    coeff::save_table_csv(coeff_path, table);
    res.files.push_back(coeff_path);

    json peaks = json::array();
    for (int m = 0; m < c.cavities; ++m) {
        const auto k = res.fidelity.argmax(m);
        peaks.push_back({{"cavity", m + 1}, {"max_fidelity", res.fidelity.max_fidelity(m)}, {"at", res.fidelity.t[k]}});
    }
    d["fidelity_peaks"] = peaks;

    if (c.wigner) {
        const int m = c.target_cavity - 1;
        const auto k = res.fidelity.argmax(m);
        const auto& rho = res.reduced[k][static_cast<std::size_t>(m)];
        const auto grid = obs::wigner_grid(rho, obs::WignerWindow::around(alpha, c.wigner_resolution), m);
        const fs::path p = dir / ("wigner_cavity" + std::to_string(m + 1) + "_peak.csv");
        obs::save_wigner_csv(p, grid);
        res.files.push_back(p);
        d["wigner_at_peak"] = {{"cavity", m + 1},
                               {"t", res.fidelity.t[k]},
                               {"negativity_volume", obs::negativity_volume(grid)},
                               {"integral", grid.integral()},
                               {"boundary_warning", grid.boundary_warning}};
    }
    for (std::size_t p = 0; p < probe_times.size(); ++p) {
        const fock::DensOp full{space, probe_states[p]};
        if (c.wigner) {
            const int m = c.target_cavity - 1;
            const auto reduced = fock::partial_trace(full, m);
            const auto grid = obs::wigner_grid(reduced.matrix, obs::WignerWindow::around(alpha, c.wigner_resolution), m);
            const fs::path w = dir / ("wigner_cavity" + std::to_string(m + 1) + "_t" + stamp(probe_times[p]) + ".csv");
            obs::save_wigner_csv(w, grid);
            res.files.push_back(w);
        }
        if (c.dump_states) {
            const fs::path b = dir / ("state_t" + stamp(probe_times[p]) + ".bin");
            io::write_matrix_binary(b, probe_states[p], c.cavities, c.cutoff, probe_times[p]);
            res.files.push_back(b);
            res.files.push_back(fs::path(b.string() + ".json"));
        }
    }
    d["wall_time_seconds"] = seconds_since(t0);
    res.diagnostics = std::move(d);
    return res;
}

json ValidationReport::to_json() const {
    return {{"clean", clean()},
            {"warnings", warnings},
            {"solver", solver},
            {"recommended_solver", recommended_solver},
            {"memory_bytes", memory_bytes},
            {"t_max", t_max}};
}

ValidationReport validate(const cfg::ExperimentConfig& c) {
    ValidationReport r;
    const bool master = uses_master(c);
    r.solver = master ? "master" : "ensemble";
    r.recommended_solver = r.solver;

    const auto cut = fock::check_cutoff(c.cutoff, cplx{c.alpha, 0.0});
    if (!cut.meets_rule)
        r.warnings.push_back("cutoff " + std::to_string(c.cutoff) + " is below the recommended " +
                             std::to_string(cut.recommended) + " for alpha = " + cfg::format_number(c.alpha) +
                             " (coherent tail mass " + cfg::format_number(cut.tail_mass) + ")");

    // Fastest physical frequency of the model; the working frame removes the bare Omega_i.
    // Hopping stays in the count: the interaction-frame coefficients oscillate at 2 lambda.
    double fastest = std::max(c.gamma, 2.0 * *std::max_element(c.lambdas.begin(), c.lambdas.end()));
    for (double w : c.omegas) {
        if (c.kind != cfg::EnvKind::markov) fastest = std::max(fastest, std::abs(c.delta - w));
        if (c.frame == "lab") fastest = std::max(fastest, w * (c.cutoff - 1));
    }
    if (c.kind == cfg::EnvKind::markov) fastest = std::max(fastest, c.gamma_big);
    if (fastest > 0.0) {
        // Counted on the RK4 stage grid (spacing dt/2), where the coefficients are sampled.
        const double period = 2.0 * kPi / fastest;
        if (0.5 * c.dt > period / 20.0)
            r.warnings.push_back("dt = " + cfg::format_number(c.dt) + " gives fewer than 20 stage points per period " +
                                 "of the fastest frequency " + cfg::format_number(fastest) + " (need dt <= " +
                                 cfg::format_number(period / 10.0) + ")");
    }
    // The coefficients switch on over 1/gamma; coarser steps cost positivity of the state.
    if (c.kind != cfg::EnvKind::markov && c.gamma * c.dt > kMaxGammaStep)
        r.warnings.push_back("dt = " + cfg::format_number(c.dt) + " resolves the memory time 1/gamma = " +
                             cfg::format_number(1.0 / c.gamma) + " with fewer than 8 steps (need dt <= " +
                             cfg::format_number(kMaxGammaStep / c.gamma) + ")");

    const auto N = static_cast<double>(c.cavities);
    const double dim = std::pow(static_cast<double>(c.cutoff), N);
    const double elem = 16.0;
    try {
        r.t_max = c.t_max ? *c.t_max : horizon(c);
    } catch (const std::exception&) {
        r.t_max = c.t_max.value_or(300.0);
    }
    const double steps = std::ceil(r.t_max / c.dt);
    const double samples = std::ceil(r.t_max / c.sample_interval) + 1;
    const double table = (2.0 * steps + 1) * N * elem;
    const double reduced = samples * N * c.cutoff * c.cutoff * elem;
    const double master_bytes = 7.0 * dim * dim * elem + reduced + table +
                                static_cast<double>(c.probes.size()) * dim * dim * elem;
    const double per_worker = 6.0 * dim * elem + (2.0 * steps + 1) * elem;
    const double ensemble_bytes = c.workers * per_worker + (c.blocks + 1.0) * reduced + table +
                                  (c.probes.empty() ? 0.0 : (c.blocks + 1.0) * c.probes.size() * dim * dim * elem);
    r.memory_bytes = master ? master_bytes : ensemble_bytes;
    if (r.memory_bytes > kMemoryLimitBytes) {
        r.warnings.push_back("estimated memory " + cfg::format_number(std::round(r.memory_bytes / 1e6)) +
                             " MB exceeds 1 GB for the " + r.solver + " solver");
        if (master) r.recommended_solver = "ensemble";
    }
    if (c.kind == cfg::EnvKind::markov && !master)
        r.warnings.push_back("delta-correlated environments cannot drive trajectories; use the master solver");
    if (c.kind == cfg::EnvKind::thermal)
        r.warnings.push_back("thermal environments support the coeffs command only");
    return r;
}

int cmd_validate(const cfg::KeyMap& map, std::ostream& log) {
    const auto c = cfg::resolve(map);
    const auto r = validate(c);
    log << r.to_json().dump(2) << "\n";
    return kOk;
}

cfg::KeyMap load_manifest_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest " + path.string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse manifest " + path.string() + ": " + e.what());
    }
    if (!m.contains("config") || !m["config"].is_object()) throw ConfigError(path.string() + " has no config block");
    cfg::KeyMap out;
    for (const auto& [k, v] : m["config"].items()) out[k] = v.get<std::string>();
    cfg::check_keys(out, path.string());
    return out;
}

int cmd_run(const cfg::KeyMap& map, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto resolved = cfg::resolved_map(map);
    const auto c = cfg::resolve(resolved);
    if (c.has_sweep()) log << "note: sweep block ignored by run\n";
    fs::create_directories(c.out_dir);
    const auto res = run_point(c, c.out_dir);
    for (const auto& p : res.diagnostics["fidelity_peaks"])
        log << "cavity " << p["cavity"] << ": max fidelity " << p["max_fidelity"].get<double>() << " at t = "
            << p["at"].get<double>() << "\n";
    write_manifest(c.out_dir, "run", resolved, seconds_since(t0), json::array({res.diagnostics}), res.files, kOk);
    log << "wrote " << (c.out_dir / "manifest.json").string() << "\n";
    return kOk;
}

int cmd_sweep(const cfg::KeyMap& map, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto resolved = cfg::resolved_map(map);
    const auto c = cfg::resolve(resolved);
    if (!c.has_sweep()) throw ConfigError("sweep needs a [sweep] block with parameter and values");
    fs::create_directories(c.out_dir);

    const std::size_t n = c.sweep_values.size();
    std::vector<std::optional<PointResult>> results(n);
    std::vector<std::string> errors(n);
    std::vector<int> codes(n, kOk);
    // Points run concurrently; nested ensembles stay single-threaded when several points share the pool.
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(c.workers), n);
    auto run_one = [&](std::size_t i) {
        try {
            auto m = cfg::with_sweep_value(resolved, c.sweep_parameter, c.sweep_values[i]);
            if (workers > 1) m["numerics.workers"] = "1";
            const auto pc = cfg::resolve(m);
            results[i] = run_point(pc, c.out_dir / ("point_" + std::to_string(i)));
        } catch (const ConfigError& e) {
            errors[i] = e.what();
            codes[i] = kConfigError;
        } catch (const std::exception& e) {
            errors[i] = e.what();
            codes[i] = kNumericalFailure;
        }
    };
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run_one(i);
            });
        for (auto& t : pool) t.join();
    }

    // Single writer, fixed point order.
    std::vector<fs::path> files;
    json runs = json::array();
    io::CsvTable curves{"sweep", {c.sweep_parameter, "t"}, {}};
    io::CsvTable summary{"sweep-summary", {c.sweep_parameter, "ok"}, {}};
    for (int m = 1; m <= c.cavities; ++m) curves.header.push_back("F" + std::to_string(m));
    for (int m = 1; m <= c.cavities; ++m) {
        summary.header.push_back("max_F" + std::to_string(m));
        summary.header.push_back("t_peak" + std::to_string(m));
    }
    if (c.cavities >= 3) {
        summary.header.push_back("D23_max");
        summary.header.push_back("D23_error");
    }
    std::size_t failed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = c.sweep_values[i];
        json entry = {{"index", i}, {"value", v}, {"directory", "point_" + std::to_string(i)}};
        std::vector<double> row{v, results[i] ? 1.0 : 0.0};
        if (results[i]) {
            const auto& r = *results[i];
            entry["diagnostics"] = r.diagnostics;
            files.insert(files.end(), r.files.begin(), r.files.end());
            for (std::size_t s = 0; s < r.fidelity.t.size(); ++s) {
                std::vector<double> line{v, r.fidelity.t[s]};
                for (int m = 0; m < c.cavities; ++m) line.push_back(r.fidelity.fidelity[static_cast<std::size_t>(m)][s]);
                curves.rows.push_back(std::move(line));
            }
            for (int m = 0; m < c.cavities; ++m) {
                row.push_back(r.fidelity.max_fidelity(m));
                row.push_back(r.fidelity.t[r.fidelity.argmax(m)]);
            }
            if (c.cavities >= 3) {
                const bool have = r.max_pair_distance.size() == 2;
                row.push_back(have ? r.max_pair_distance[0] : std::nan(""));
                row.push_back(have ? r.max_pair_distance[1] : std::nan(""));
            }
        } else {
            ++failed;
            entry["error"] = errors[i];
            entry["exit_code"] = codes[i];
            log << "point " << i << " (" << c.sweep_parameter << " = " << v << ") failed: " << errors[i] << "\n";
            row.resize(summary.header.size(), std::nan(""));
        }
        summary.rows.push_back(std::move(row));
        runs.push_back(std::move(entry));
    }
    const fs::path curves_path = c.out_dir / "sweep.csv";
    const fs::path summary_path = c.out_dir / "summary.csv";
    io::write_csv(curves_path, curves);
    io::write_csv(summary_path, summary);
    files.push_back(curves_path);
    files.push_back(summary_path);

    for (const auto& row : summary.rows) {
        if (row[1] == 0.0) continue;
        log << c.sweep_parameter << " = " << row[0];
        for (int m = 0; m < c.cavities; ++m) log << "  max F" << m + 1 << " = " << row[2 + 2 * static_cast<std::size_t>(m)];
        log << "\n";
    }
    const int status = failed == 0 ? kOk : kPartialFailure;
    write_manifest(c.out_dir, "sweep", resolved, seconds_since(t0), runs, files, status);
    log << "wrote " << (c.out_dir / "manifest.json").string() << "\n";
    return status;
}

int cmd_coeffs(const cfg::KeyMap& map, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto resolved = cfg::resolved_map(map);
    const auto c = cfg::resolve(resolved);
    fs::create_directories(c.out_dir);
    const auto spec = system_spec(c);
    std::vector<fs::path> files;
    json runs = json::array();

    if (c.kind == cfg::EnvKind::thermal) {
        const double t_max = c.t_max ? snapped(*c.t_max, c.dt) : snapped(1.0, c.dt);
        const auto steps = steps_for(t_max, c.dt);
        const auto kernels = env::thermal_kernels({c.gamma_big, c.gamma, c.delta}, c.beta, c.dt, steps + 1);
        const auto g = thermal::solve_thermal_coeffs(spec, kernels, c.dt, t_max);
        io::CsvTable t{"thermal-coefficients", {"t"}, {}};
        for (int m = 1; m <= c.cavities; ++m)
            for (const char* name : {"X", "Y"}) {
                t.header.push_back(std::string("re_") + name + std::to_string(m));
                t.header.push_back(std::string("im_") + name + std::to_string(m));
            }
        for (std::size_t n = 0; n <= g.steps; ++n) {
            std::vector<double> row{c.dt * static_cast<double>(n)};
            for (int m = 0; m < c.cavities; ++m)
                for (const CVec* v : {&g.X[n], &g.Y[n]}) {
                    row.push_back((*v)(m).real());
                    row.push_back((*v)(m).imag());
                }
            t.rows.push_back(std::move(row));
        }
        const fs::path p = c.out_dir / "thermal_coefficients.csv";
        io::write_csv(p, t);
        files.push_back(p);
        runs.push_back({{"kind", "thermal"},
                        {"t_max", t_max},
                        {"steps", g.steps},
                        {"max_xy_coupling", g.max_xy_coupling},
                        {"max_yprime_coupling", g.max_yprime_coupling}});
        log << "thermal coefficients: " << g.steps << " steps, max |l (x.Y)| = " << g.max_xy_coupling
            << ", max |l Y'| = " << g.max_yprime_coupling << "\n";
    } else {
        const double t_max = c.t_max ? snapped(*c.t_max, c.dt) : snapped(std::max(60.0, 40.0 / c.gamma), c.dt);
        const auto table = build_coefficients(c, c.dt, t_max);
        const fs::path p = c.out_dir / "coefficients.csv";
        coeff::save_table_csv(p, table);
        files.push_back(p);
        const auto ratio = coeff::effective_coupling_ratio(table);
        json tail = json::array();
        for (int m = 0; m < c.cavities; ++m) {
            const auto um = static_cast<std::size_t>(m);
            tail.push_back({{"cavity", m + 1}, {"re", ratio.re[um]}, {"im", ratio.im[um]}, {"ratio", ratio.ratio[um]}});
            log << "cavity " << m + 1 << ": long-time F = " << ratio.re[um] << " + " << ratio.im[um] << "i\n";
        }
        runs.push_back({{"kind", cfg::to_string(c.kind)},
                        {"provenance", coeff::to_string(table.provenance)},
                        {"t_max", t_max},
                        {"long_time", tail},
                        {"drift", ratio.drift},
                        {"stationary", ratio.stationary}});
    }

    if (!c.map_delta.empty()) {
        if (c.kind != cfg::EnvKind::ou) throw ConfigError("the coefficient map needs environment.kind=ou");
        io::CsvTable map_table{"fmap", {"delta", "tau"}, {}};
        for (int m = 1; m <= c.cavities; ++m) {
            map_table.header.push_back("re_F" + std::to_string(m));
            map_table.header.push_back("im_F" + std::to_string(m));
            map_table.header.push_back("ratio" + std::to_string(m));
        }
        map_table.header.push_back("drift");
        map_table.header.push_back("stationary");
        json points = json::array();
        for (double delta : c.map_delta)
            for (double tau : c.map_tau) {
                const double gamma = 1.0 / tau;
                const double span = std::max(60.0, 40.0 * tau);
                const double dt = std::min(c.dt, 0.05 / std::max({gamma, std::abs(delta), 1.0}));
                const auto table = coeff::solve_F_ou_fast(spec, {c.gamma_big, gamma, delta}, dt, span);
                const auto r = coeff::effective_coupling_ratio(table);
                std::vector<double> row{delta, tau};
                for (int m = 0; m < c.cavities; ++m) {
                    const auto um = static_cast<std::size_t>(m);
                    row.push_back(r.re[um]);
                    row.push_back(r.im[um]);
                    // Magnitude of Im F / Re F; the sign only encodes the orientation of the induced coupling.
                    row.push_back(std::abs(r.ratio[um]));
                }
                row.push_back(r.drift);
                row.push_back(r.stationary ? 1.0 : 0.0);
                map_table.rows.push_back(std::move(row));
                if (!r.stationary) points.push_back({{"delta", delta}, {"tau", tau}, {"drift", r.drift}});
            }
        const fs::path p = c.out_dir / "fmap.csv";
        io::write_csv(p, map_table);
        files.push_back(p);
        runs.push_back({{"kind", "fmap"}, {"points", map_table.rows.size()}, {"non_stationary", points}});
        log << "coefficient map: " << map_table.rows.size() << " points\n";
    }
    write_manifest(c.out_dir, "coeffs", resolved, seconds_since(t0), runs, files, kOk);
    log << "wrote " << (c.out_dir / "manifest.json").string() << "\n";
    return kOk;
}

} // namespace cradle::exp
