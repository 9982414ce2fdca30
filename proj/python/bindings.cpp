// Python bindings for the cradle core library.

#include "cradle/experiment.hpp"
#include "cradle/thermal.hpp"

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace cradle;

namespace {

fock::SystemSpec make_spec(const std::vector<double>& omegas, const std::vector<double>& lambdas,
                           const std::vector<double>& weights) {
    fock::SystemSpec s{omegas, lambdas, weights};
    const auto n = omegas.size();
    if (s.lambdas.empty()) s.lambdas.assign(n > 0 ? n - 1 : 0, 0.0);
    if (s.lambdas.size() + 1 == n) s.lambdas.push_back(0.0);
    if (s.weights.empty()) s.weights.assign(n, 1.0);
    s.validate();
    return s;
}

py::dict table_dict(const coeff::CoefficientTable& t) {
    const auto rows = static_cast<Eigen::Index>(t.F.size());
    Eigen::VectorXd time(rows);
    CMat F(rows, t.num_modes());
    for (Eigen::Index k = 0; k < rows; ++k) {
        time(k) = t.dt * static_cast<double>(k);
        F.row(k) = t.F[static_cast<std::size_t>(k)].transpose();
    }
    py::dict d;
    d["t"] = time;
    d["F"] = F;
    d["provenance"] = coeff::to_string(t.provenance);
    return d;
}

py::dict curve_dict(const obs::FidelityCurve& c) {
    py::dict d;
    d["t"] = c.t;
    d["fidelity"] = c.fidelity;
    d["theta"] = c.theta;
    return d;
}

cfg::KeyMap to_keymap(const py::dict& config) {
    cfg::KeyMap m;
    for (const auto& [k, v] : config) m[py::str(k)] = py::str(v);
    cfg::check_keys(m, "python configuration");
    return m;
}

py::object json_to_python(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

} // namespace

PYBIND11_MODULE(_cradle, m) {
    m.doc() = "Cat-state transfer between cavities through a common non-Markovian environment";
    m.attr("__version__") = exp::kVersion;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    // Fock space
    py::class_<fock::FockSpace>(m, "FockSpace")
        .def(py::init<int, int>(), py::arg("num_modes"), py::arg("cutoff"))
        .def_property_readonly("num_modes", &fock::FockSpace::num_modes)
        .def_property_readonly("cutoff", &fock::FockSpace::cutoff)
        .def_property_readonly("dimension", &fock::FockSpace::dimension)
        .def("occupation", &fock::FockSpace::occupation, py::arg("index"), py::arg("mode"));

    py::class_<fock::SystemSpec>(m, "SystemSpec")
        .def(py::init(&make_spec), py::arg("omegas"), py::arg("lambdas") = std::vector<double>{},
             py::arg("weights") = std::vector<double>{})
        .def_readonly("omegas", &fock::SystemSpec::omegas)
        .def_readonly("lambdas", &fock::SystemSpec::lambdas)
        .def_readonly("weights", &fock::SystemSpec::weights)
        .def("__repr__", [](const fock::SystemSpec& s) {
            return "SystemSpec(omegas=" + cfg::format_list(s.omegas) + ", lambdas=" + cfg::format_list(s.lambdas) +
                   ", weights=" + cfg::format_list(s.weights) + ")";
        });

    m.def("cat_state", [](const fock::FockSpace& s, int mode, cplx alpha, double theta) {
        return fock::cat_state(s, mode, alpha, theta).amplitudes;
    }, py::arg("space"), py::arg("mode"), py::arg("alpha"), py::arg("theta") = 0.0,
       "Normalised (|a> + |-a>) in `mode` (zero-based), vacuum elsewhere.");
    m.def("coherent_state", [](const fock::FockSpace& s, int mode, cplx alpha) {
        return fock::coherent_state(s, mode, alpha).amplitudes;
    }, py::arg("space"), py::arg("mode"), py::arg("alpha"));
    m.def("system_hamiltonian", [](const fock::SystemSpec& spec, const fock::FockSpace& s) {
        return CMat(fock::build_system_hamiltonian(spec, s).matrix);
    }, py::arg("spec"), py::arg("space"));
    m.def("partial_trace", [](const fock::FockSpace& s, const CMat& rho, int keep) {
        return fock::partial_trace({s, rho}, keep).matrix;
    }, py::arg("space"), py::arg("rho"), py::arg("keep"));

    // Environment
    m.def("ou_kernel", [](double gamma_big, double gamma, double delta, const std::vector<double>& lags) {
        const auto k = env::ou_kernel({gamma_big, gamma, delta});
        std::vector<cplx> out;
        for (double u : lags) out.push_back(k(u));
        return out;
    }, py::arg("Gamma"), py::arg("gamma"), py::arg("delta"), py::arg("lags"));
    m.def("bose_einstein", &env::bose_einstein, py::arg("omega"), py::arg("beta"));

    // Coefficients
    m.def("solve_f_ou_fast", [](const fock::SystemSpec& spec, double gamma_big, double gamma, double delta, double dt,
                                double t_max) {
        return table_dict(coeff::solve_F_ou_fast(spec, {gamma_big, gamma, delta}, dt, t_max));
    }, py::arg("spec"), py::arg("Gamma"), py::arg("gamma"), py::arg("delta"), py::arg("dt"), py::arg("t_max"));
    m.def("solve_f_history", [](const fock::SystemSpec& spec, double gamma_big, double gamma, double delta, double dt,
                                double t_max) {
        py::gil_scoped_release release;
        auto table = coeff::solve_f_history(spec, env::ou_kernel({gamma_big, gamma, delta}), dt, t_max).table;
        py::gil_scoped_acquire acquire;
        return table_dict(table);
    }, py::arg("spec"), py::arg("Gamma"), py::arg("gamma"), py::arg("delta"), py::arg("dt"), py::arg("t_max"),
       "History-grid solver for an OU kernel.");
    m.def("coupling_ratio", [](const fock::SystemSpec& spec, double gamma_big, double gamma, double delta, double dt,
                               double t_max) {
        const auto r = coeff::effective_coupling_ratio(coeff::solve_F_ou_fast(spec, {gamma_big, gamma, delta}, dt, t_max));
        py::dict d;
        d["re"] = r.re;
        d["im"] = r.im;
        d["ratio"] = r.ratio;
        d["stationary"] = r.stationary;
        return d;
    }, py::arg("spec"), py::arg("Gamma"), py::arg("gamma"), py::arg("delta"), py::arg("dt"), py::arg("t_max"));

    // Observables
    m.def("transfer_fidelity", [](const CMat& rho, cplx alpha, int grid) {
        const auto r = obs::transfer_fidelity(rho, alpha, grid);
        return py::make_tuple(r.fidelity, r.theta);
    }, py::arg("rho"), py::arg("alpha"), py::arg("grid") = 256,
       "Returns (fidelity, theta) maximised over the cat phase.");
    m.def("wigner", [](const CMat& rho, cplx alpha, int resolution) {
        const auto w = obs::wigner_grid(rho, obs::WignerWindow::around(alpha, resolution));
        Eigen::VectorXd x(w.window.nx), p(w.window.np);
        for (int i = 0; i < w.window.nx; ++i) x(i) = w.window.x(i);
        for (int j = 0; j < w.window.np; ++j) p(j) = w.window.p(j);
        return py::make_tuple(x, p, w.W, obs::negativity_volume(w));
    }, py::arg("rho"), py::arg("alpha"), py::arg("resolution") = 121,
       "Returns (x, p, W[x, p], negativity volume) on a window around the cat.");
    m.def("trace_distance", &obs::trace_distance, py::arg("a"), py::arg("b"));
    m.def("purity", &obs::purity, py::arg("rho"));

    // Dynamics
    m.def("run_master", [](const fock::SystemSpec& spec, int cutoff, cplx alpha, double gamma_big, double gamma,
                           double delta, double dt, double t_max, double sample_interval) {
        const fock::FockSpace space(spec.num_modes(), cutoff);
        const auto psi0 = dyn::default_initial_state(space, alpha, 0);
        dyn::MasterOptions o;
        o.dt = dt;
        o.t_max = t_max;
        o.sample_stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sample_interval / dt)));
        o.alpha = alpha;
        dyn::MasterRun run;
        {
            py::gil_scoped_release release;
            const auto table = coeff::solve_F_ou_fast(spec, {gamma_big, gamma, delta}, 0.5 * dt, t_max);
            run = dyn::run_master(spec, space, fock::projector(psi0).matrix, table, o);
        }
        py::dict d = curve_dict(run.fidelity);
        d["reduced"] = run.reduced;
        d["min_eigenvalue"] = run.monitors.min_eigenvalue;
        d["max_trace_drift"] = run.monitors.max_trace_drift;
        return d;
    }, py::arg("spec"), py::arg("cutoff"), py::arg("alpha"), py::arg("Gamma"), py::arg("gamma"), py::arg("delta"),
       py::arg("dt"), py::arg("t_max"), py::arg("sample_interval") = 0.5,
       "Master-equation run from a cat in cavity 1 with an OU environment.");

    // Declarative layer
    m.def("presets", [] {
        std::vector<std::string> names;
        for (const auto& p : exp::presets()) names.push_back(p.name);
        return names;
    });
    m.def("preset", [](const std::string& name) { return exp::find_preset(name).keys; }, py::arg("name"));
    m.def("validate", [](const py::dict& config) {
        return json_to_python(exp::validate(cfg::resolve(to_keymap(config))).to_json());
    }, py::arg("config"));
    m.def("horizon", [](const py::dict& config) { return exp::horizon(cfg::resolve(to_keymap(config))); },
          py::arg("config"));
    m.def("run_point", [](const py::dict& config, const std::filesystem::path& out_dir) {
        const auto c = cfg::resolve(to_keymap(config));
        exp::PointResult r;
        {
            py::gil_scoped_release release;
            std::filesystem::create_directories(out_dir);
            r = exp::run_point(c, out_dir);
        }
        py::dict d = curve_dict(r.fidelity);
        d["reduced"] = r.reduced;
        d["diagnostics"] = json_to_python(r.diagnostics);
        std::vector<std::string> files;
        for (const auto& f : r.files) files.push_back(f.string());
        d["files"] = files;
        return d;
    }, py::arg("config"), py::arg("out_dir"), "One simulation from a flat section.key -> value mapping.");
}
