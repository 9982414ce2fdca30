#include "cradle/coefficients.hpp"

#include "cradle/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cradle::coeff {

const char* to_string(Provenance p) {
    switch (p) {
    case Provenance::history_grid: return "history-grid";
    case Provenance::ou_fast: return "ou-fast";
    case Provenance::markov_analytic: return "markov-analytic";
    case Provenance::thermal: return "thermal";
    case Provenance::imported: return "imported";
    }
    return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
    for (auto p : {Provenance::history_grid, Provenance::ou_fast, Provenance::markov_analytic, Provenance::thermal,
                   Provenance::imported})
        if (s == to_string(p)) return p;
    throw std::invalid_argument("unknown coefficient provenance '" + s + "'");
}

CVec CoefficientTable::at(double t) const {
    if (F.empty()) throw std::out_of_range("empty coefficient table");
    const double x = t / dt;
    const double last = static_cast<double>(num_steps());
    if (x < -1e-9 || x > last + 1e-9)
        throw std::out_of_range("time " + std::to_string(t) + " outside coefficient table [0, " +
                                std::to_string(t_max()) + "]");
    if (F.size() == 1) return F.front();
    const double xc = std::clamp(x, 0.0, last);
    auto k = std::min(static_cast<std::size_t>(xc), num_steps() - 1);
    const double w = xc - static_cast<double>(k);
    if (w == 0.0) return F[k];
    return (1.0 - w) * F[k] + w * F[k + 1];
}

namespace {

std::size_t step_count(double dt, double t_max) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("coefficient solver needs dt > 0");
    if (!(t_max >= 0.0) || !std::isfinite(t_max)) throw std::invalid_argument("coefficient solver needs t_max >= 0");
    return static_cast<std::size_t>(std::llround(t_max / dt));
}

// Real tridiagonal h with Omega on the diagonal and lambda off it.
Eigen::MatrixXd hopping_matrix(const fock::SystemSpec& spec) {
    const int n = spec.num_modes();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        h(i, i) = spec.omegas[static_cast<std::size_t>(i)];
        if (i + 1 < n) h(i, i + 1) = h(i + 1, i) = spec.lambdas[static_cast<std::size_t>(i)];
    }
    return h;
}

CVec weights_of(const fock::SystemSpec& spec) {
    CVec l(spec.num_modes());
    for (int i = 0; i < spec.num_modes(); ++i) l(i) = spec.weights[static_cast<std::size_t>(i)];
    return l;
}

void check_finite(const CVec& v, double guard, const char* what, std::size_t step) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!std::isfinite(v(i).real()) || !std::isfinite(v(i).imag()) || std::abs(v(i)) > guard)
            throw NumericalError(std::string(what) + " exceeded the overflow guard", static_cast<long>(step));
}

} // namespace

CoefficientTable markov_coefficients(const fock::SystemSpec& spec, double gamma_big, double dt, double t_max) {
    spec.validate();
    const auto steps = step_count(dt, t_max);
    CoefficientTable t;
    t.dt = dt;
    t.provenance = Provenance::markov_analytic;
    const CVec value = 0.5 * gamma_big * weights_of(spec);
    t.F.assign(steps + 1, value);
    return t;
}

HistoryResult solve_f_history(const fock::SystemSpec& spec, const env::EnvKernel& kernel, double dt,
                              double t_max, const HistoryOptions& opts) {
    spec.validate();
    const auto steps = step_count(dt, t_max);
    HistoryResult result;
    if (kernel.is_delta()) {
        result.table = markov_coefficients(spec, kernel.lorentz().gamma_big, dt, t_max);
        return result;
    }
    if (kernel.max_lag() < t_max * (1.0 - 1e-12))
        throw std::invalid_argument("kernel table does not cover the requested horizon");

    const int n_modes = spec.num_modes();
    const CVec l = weights_of(spec);
    const CMat ih = kI * hopping_matrix(spec).cast<cplx>();
    const CMat eye = CMat::Identity(n_modes, n_modes);
    const auto ktab = env::tabulate(kernel, dt, steps + 1);
    const double half = 0.5 * dt;

    CMat cols(n_modes, static_cast<Eigen::Index>(steps + 1));
    cols.col(0) = l;
    auto& table = result.table;
    table.dt = dt;
    table.provenance = Provenance::history_grid;
    table.F.reserve(steps + 1);
    table.F.push_back(CVec::Zero(n_modes));

    HistoryGrid grid;
    grid.dt = dt;
    if (opts.keep_history) {
        grid.history.reserve(steps + 1);
        grid.history.push_back(cols.leftCols(1));
    }

    const CVec boundary = half * ktab[0] * l;
    CVec G(n_modes);
    for (std::size_t n = 0; n < steps; ++n) {
        const auto width = static_cast<Eigen::Index>(n + 1);
        // Old columns weighted for the quadrature at t_{n+1}.
        G.setZero();
        for (Eigen::Index m = 0; m < width; ++m) {
            const double w = (m == 0) ? half : dt;
            G.noalias() += (w * ktab[n + 1 - static_cast<std::size_t>(m)]) * cols.col(m);
        }
        const CVec& Fn = table.F[n];
        const CMat explicit_part = eye + half * (ih + Fn * l.transpose());
        CVec guess = (n == 0) ? Fn : CVec(2.0 * Fn - table.F[n - 1]);
        CMat P;
        int it = 0;
        for (;; ++it) {
            const CMat implicit_part = eye - half * (ih + guess * l.transpose());
            P = implicit_part.partialPivLu().solve(explicit_part);
            CVec next = P * G + boundary;
            const double change = (next - guess).lpNorm<Eigen::Infinity>();
            guess = std::move(next);
            if (change <= opts.corrector_tolerance * std::max(1.0, guess.lpNorm<Eigen::Infinity>())) break;
            if (it + 1 >= opts.max_corrector_iterations)
                throw NumericalError("history corrector did not converge", static_cast<long>(n + 1));
        }
        result.max_corrector_iterations_used = std::max(result.max_corrector_iterations_used, it + 1);
        check_finite(guess, opts.overflow_guard, "F", n + 1);
        cols.leftCols(width) = P * cols.leftCols(width);
        cols.col(width) = l;
        const double fmax = cols.leftCols(width + 1).cwiseAbs().maxCoeff();
        if (!std::isfinite(fmax) || fmax > opts.overflow_guard)
            throw NumericalError("history column exceeded the overflow guard", static_cast<long>(n + 1));
        table.F.push_back(std::move(guess));
        if (opts.keep_history) grid.history.push_back(cols.leftCols(width + 1));
    }

    if (opts.keep_final_grid || opts.keep_history) {
        grid.step = steps;
        grid.columns = std::move(cols);
        result.grid = std::move(grid);
    }
    return result;
}

CoefficientTable richardson(const CoefficientTable& coarse, const CoefficientTable& fine) {
    if (std::abs(fine.dt * 2.0 - coarse.dt) > 1e-12 * coarse.dt)
        throw std::invalid_argument("Richardson combination needs the fine table at half the coarse step");
    if (fine.num_steps() < 2 * coarse.num_steps())
        throw std::invalid_argument("fine table is shorter than the coarse table");
    CoefficientTable out;
    out.dt = coarse.dt;
    out.provenance = coarse.provenance;
    out.F.reserve(coarse.F.size());
    for (std::size_t k = 0; k < coarse.F.size(); ++k) out.F.push_back((4.0 * fine.F[2 * k] - coarse.F[k]) / 3.0);
    return out;
}

HalvingResult solve_f_history_refined(const fock::SystemSpec& spec, const env::EnvKernel& kernel, double dt,
                                      double t_max, const HistoryOptions& opts) {
    HistoryOptions o = opts;
    o.keep_final_grid = false;
    o.keep_history = false;
    HalvingResult r;
    r.coarse = solve_f_history(spec, kernel, dt, t_max, o).table;
    r.fine = solve_f_history(spec, kernel, 0.5 * dt, t_max, o).table;
    r.extrapolated = richardson(r.coarse, r.fine);
    for (std::size_t k = 0; k < r.coarse.F.size(); ++k)
        r.sup_change = std::max(r.sup_change, (r.fine.F[2 * k] - r.coarse.F[k]).lpNorm<Eigen::Infinity>());
    return r;
}

CoefficientTable solve_F_ou_fast(const fock::SystemSpec& spec, const env::LorentzSpec& lorentz, double dt,
                                 double t_max, double overflow_guard) {
    spec.validate();
    lorentz.validate();
    const auto steps = step_count(dt, t_max);
    const int n_modes = spec.num_modes();
    const CVec l = weights_of(spec);
    // Linear part: -(gamma + i Delta) + i h.
    const CMat lin = kI * hopping_matrix(spec).cast<cplx>() -
                     cplx(lorentz.gamma, lorentz.delta) * CMat::Identity(n_modes, n_modes);
    const CVec source = 0.5 * lorentz.gamma_big * lorentz.gamma * l;
    auto rhs = [&](const CVec& F) -> CVec {
        const cplx lf = l.dot(F);  // dot conjugates its first argument; l is real
        return source + lin * F + lf * F;
    };

    CoefficientTable t;
    t.dt = dt;
    t.provenance = Provenance::ou_fast;
    t.F.reserve(steps + 1);
    t.F.push_back(CVec::Zero(n_modes));
    CVec F = t.F.front();
    for (std::size_t n = 0; n < steps; ++n) {
        const CVec k1 = rhs(F);
        const CVec k2 = rhs(F + 0.5 * dt * k1);
        const CVec k3 = rhs(F + 0.5 * dt * k2);
        const CVec k4 = rhs(F + dt * k3);
        F += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_finite(F, overflow_guard, "F", n + 1);
        t.F.push_back(F);
    }
    return t;
}

CoefficientTable solve_coefficients(const fock::SystemSpec& spec, const env::EnvKernel& kernel, double dt,
                                    double t_max) {
    switch (kernel.kind()) {
    case env::KernelKind::markovian_delta:
        return markov_coefficients(spec, kernel.lorentz().gamma_big, dt, t_max);
    case env::KernelKind::ou: return solve_F_ou_fast(spec, kernel.lorentz(), dt, t_max);
    default: return solve_f_history(spec, kernel, dt, t_max).table;
    }
}

CouplingRatio effective_coupling_ratio(const CoefficientTable& table, double window) {
    if (!(window > 0.0 && window <= 1.0)) throw std::invalid_argument("tail window must lie in (0, 1]");
    if (table.F.size() < 4) throw std::invalid_argument("coefficient table too short for a tail average");
    const std::size_t steps = table.num_steps();
    const auto start = static_cast<std::size_t>(std::floor((1.0 - window) * static_cast<double>(steps)));
    const std::size_t count = steps + 1 - start;
    const std::size_t mid = start + count / 2;
    const int n = table.num_modes();

    CouplingRatio r;
    r.re.resize(static_cast<std::size_t>(n));
    r.im.resize(static_cast<std::size_t>(n));
    r.ratio.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        cplx all{}, first{}, second{};
        for (std::size_t k = start; k <= steps; ++k) {
            all += table.F[k](i);
            (k < mid ? first : second) += table.F[k](i);
        }
        all /= static_cast<double>(count);
        first /= static_cast<double>(mid - start);
        second /= static_cast<double>(steps + 1 - mid);
        const auto ui = static_cast<std::size_t>(i);
        r.re[ui] = all.real();
        r.im[ui] = all.imag();
        if (all.imag() == 0.0)
            r.ratio[ui] = 0.0;
        else if (all.real() == 0.0)
            r.ratio[ui] = std::copysign(std::numeric_limits<double>::infinity(), all.imag());
        else
            r.ratio[ui] = all.imag() / all.real();
        const double mag = std::abs(all);
        if (mag > 0.0) r.drift = std::max(r.drift, std::abs(second - first) / mag);
    }
    r.stationary = r.drift < 0.01;
    return r;
}

double relative_sup_difference(const CoefficientTable& a, const CoefficientTable& b) {
    if (std::abs(a.dt - b.dt) > 1e-12 * std::max(a.dt, b.dt))
        throw std::invalid_argument("tables must share the same step");
    if (a.num_modes() != b.num_modes()) throw std::invalid_argument("tables must have the same mode count");
    const std::size_t n = std::min(a.F.size(), b.F.size());
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        diff = std::max(diff, (a.F[k] - b.F[k]).lpNorm<Eigen::Infinity>());
        scale = std::max(scale, b.F[k].lpNorm<Eigen::Infinity>());
    }
    return scale > 0.0 ? diff / scale : diff;
}

void save_table_csv(const std::filesystem::path& path, const CoefficientTable& table) {
    io::CsvTable csv;
    csv.kind = std::string("coefficients.") + to_string(table.provenance);
    csv.header.push_back("t");
    for (int i = 1; i <= table.num_modes(); ++i) {
        csv.header.push_back("re_F" + std::to_string(i));
        csv.header.push_back("im_F" + std::to_string(i));
    }
    csv.rows.reserve(table.F.size());
    for (std::size_t k = 0; k < table.F.size(); ++k) {
        std::vector<double> row{table.dt * static_cast<double>(k)};
        for (Eigen::Index i = 0; i < table.F[k].size(); ++i) {
            row.push_back(table.F[k](i).real());
            row.push_back(table.F[k](i).imag());
        }
        csv.rows.push_back(std::move(row));
    }
    io::write_csv(path, csv);
}

CoefficientTable load_table_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string first;
    if (!in || !std::getline(in, first)) throw std::runtime_error("cannot read coefficient table " + path.string());
    const std::string prefix = "# schema=cradle.coefficients.";
    if (first.rfind(prefix, 0) != 0) throw std::runtime_error(path.string() + " is not a coefficient table");
    const auto dot = first.rfind(".v");
    const std::string prov = first.substr(prefix.size(), dot - prefix.size());
    in.close();

    const auto csv = io::read_csv(path, "coefficients." + prov);
    if (csv.header.size() < 3 || csv.header.size() % 2 == 0)
        throw std::runtime_error(path.string() + ": expected t followed by (re, im) column pairs");
    if (csv.rows.size() < 2) throw std::runtime_error(path.string() + ": need at least two rows");
    CoefficientTable t;
    t.provenance = provenance_from_string(prov);
    t.dt = csv.rows[1][0] - csv.rows[0][0];
    const auto modes = static_cast<Eigen::Index>((csv.header.size() - 1) / 2);
    for (std::size_t k = 0; k < csv.rows.size(); ++k) {
        const auto& row = csv.rows[k];
        if (std::abs(row[0] - t.dt * static_cast<double>(k)) > 1e-9 * std::max(1.0, row[0]))
            throw std::runtime_error(path.string() + ": time column is not uniform");
        CVec F(modes);
        for (Eigen::Index i = 0; i < modes; ++i) F(i) = cplx(row[static_cast<std::size_t>(1 + 2 * i)],
                                                              row[static_cast<std::size_t>(2 + 2 * i)]);
        t.F.push_back(std::move(F));
    }
    return t;
}

} // namespace cradle::coeff
