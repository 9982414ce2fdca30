#include "cradle/observables.hpp"

#include "cradle/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cradle::obs {

namespace {

constexpr double kTwoPi = 2.0 * kPi;

double wrap_angle(double theta) {
    double r = std::fmod(theta, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    return r;
}

// f(theta) = g_0 + 2 Re sum_{d>0} g_d e^{i d theta}
struct TrigObjective {
    std::vector<cplx> g;

    double operator()(double theta) const {
        double v = g[0].real();
        const cplx step = std::exp(cplx(0.0, theta));
        cplx ph = step;
        for (std::size_t d = 1; d < g.size(); ++d) {
            v += 2.0 * (g[d] * ph).real();
            ph *= step;
        }
        return v;
    }
};

} // namespace

FidelityResult transfer_fidelity(const CMat& rho, cplx alpha, int grid) {
    if (rho.rows() != rho.cols()) throw std::invalid_argument("fidelity needs a square single-mode matrix");
    if (grid < 8) throw std::invalid_argument("fidelity grid needs at least 8 points");
    const int nc = static_cast<int>(rho.rows());
    // Throws when the cutoff cannot hold the target cat.
    const CVec c = fock::cat_amplitudes(nc, alpha, 0.0);

    // Rotated cat amplitudes are c_n e^{-i n theta}; collect diagonals of rho.
    TrigObjective f;
    f.g.assign(static_cast<std::size_t>(nc), cplx{});
    for (int m = 0; m < nc; ++m)
        for (int n = 0; n <= m; ++n)
            f.g[static_cast<std::size_t>(m - n)] += std::conj(c(m)) * c(n) * rho(m, n);

    FidelityResult r;
    int best = 0;
    std::vector<double> values(static_cast<std::size_t>(grid));
    const double h = kTwoPi / grid;
    for (int k = 0; k < grid; ++k) {
        values[static_cast<std::size_t>(k)] = f(k * h);
        if (values[static_cast<std::size_t>(k)] > values[static_cast<std::size_t>(best)]) best = k;
    }
    r.coarse_max = values[static_cast<std::size_t>(best)];
    double th = best * h, fv = r.coarse_max;

    // Successive parabolic interpolation; the bracket follows the maximum until it
    // straddles it, then shrinks to the last vertex step.
    double span = h;
    for (int iter = 0; iter < 100 && span > 1e-12; ++iter) {
        const double fl = f(th - span), fr = f(th + span);
        if (fl > fv || fr > fv) {
            if (fl > fr) th -= span, fv = fl;
            else th += span, fv = fr;
            continue;
        }
        const double denom = fl - 2.0 * fv + fr;
        const double step = denom < 0.0 ? 0.5 * span * (fl - fr) / denom : 0.0;
        const double fc = f(th + step);
        if (fc > fv) th += step, fv = fc;
        if (std::abs(step) < 1e-5) break;
        span = std::max(2.0 * std::abs(step), 1e-3 * span);
    }
    if (r.coarse_max > fv) th = best * h, fv = r.coarse_max;
    r.theta = wrap_angle(th);
    r.fidelity = fv;
    // Round-off beyond the physical range is clipped on both estimates.
    for (double* v : {&r.fidelity, &r.coarse_max}) {
        if (*v > 1.0 && *v <= 1.0 + 1e-9) *v = 1.0;
        if (*v < 0.0 && *v >= -1e-9) *v = 0.0;
    }
    return r;
}

FidelityResult transfer_fidelity(const fock::DensOp& rho, cplx alpha, int grid) {
    if (rho.space.num_modes() != 1) throw std::invalid_argument("fidelity needs a single-mode density operator");
    return transfer_fidelity(rho.matrix, alpha, grid);
}

double FidelityCurve::max_fidelity(int mode) const {
    const auto& v = fidelity.at(static_cast<std::size_t>(mode));
    return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

std::size_t FidelityCurve::argmax(int mode) const {
    const auto& v = fidelity.at(static_cast<std::size_t>(mode));
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void save_fidelity_csv(const std::filesystem::path& path, const FidelityCurve& curve) {
    io::CsvTable csv;
    csv.kind = "fidelity";
    csv.header.push_back("t");
    const int n = curve.num_modes();
    for (int i = 1; i <= n; ++i) csv.header.push_back("F" + std::to_string(i));
    for (int i = 1; i <= n; ++i) csv.header.push_back("theta" + std::to_string(i));
    for (std::size_t k = 0; k < curve.t.size(); ++k) {
        std::vector<double> row{curve.t[k]};
        for (int i = 0; i < n; ++i) row.push_back(curve.fidelity[static_cast<std::size_t>(i)][k]);
        for (int i = 0; i < n; ++i) row.push_back(curve.theta[static_cast<std::size_t>(i)][k]);
        csv.rows.push_back(std::move(row));
    }
    io::write_csv(path, csv);
}

FidelityCurve load_fidelity_csv(const std::filesystem::path& path) {
    const auto csv = io::read_csv(path, "fidelity");
    if (csv.header.size() < 3 || csv.header.size() % 2 == 0)
        throw std::runtime_error(path.string() + ": expected t, F_i..., theta_i...");
    const std::size_t n = (csv.header.size() - 1) / 2;
    FidelityCurve c;
    c.fidelity.resize(n);
    c.theta.resize(n);
    for (const auto& row : csv.rows) {
        c.t.push_back(row[0]);
        for (std::size_t i = 0; i < n; ++i) {
            c.fidelity[i].push_back(row[1 + i]);
            c.theta[i].push_back(row[1 + n + i]);
        }
    }
    return c;
}

WignerWindow WignerWindow::around(cplx alpha, int resolution) {
    if (resolution < 3) throw std::invalid_argument("Wigner window needs at least 3 points per axis");
    const double r = std::abs(alpha) + 4.0;
    return WignerWindow{-r, r, -r, r, resolution, resolution};
}

double WignerGrid::integral() const {
    double s = 0.0;
    for (int i = 0; i < window.nx; ++i) {
        const double wx = (i == 0 || i == window.nx - 1) ? 0.5 : 1.0;
        for (int j = 0; j < window.np; ++j) {
            const double wp = (j == 0 || j == window.np - 1) ? 0.5 : 1.0;
            s += wx * wp * W(i, j);
        }
    }
    return s * window.dx() * window.dp();
}

namespace {

// Displaced-parity sum with the three-term recursion over Fock indices; buf has
// one entry per Fock level and is reused between points.
double wigner_at(const CMat& rho, cplx a, std::vector<cplx>& buf) {
    const int n = static_cast<int>(rho.rows());
    buf[0] = std::exp(-2.0 * std::norm(a)) / kPi;
    double w = rho(0, 0).real() * buf[0].real();
    for (int k = 1; k < n; ++k) {
        buf[static_cast<std::size_t>(k)] = 2.0 * a * buf[static_cast<std::size_t>(k - 1)] / std::sqrt(double(k));
        w += 2.0 * (rho(0, k) * buf[static_cast<std::size_t>(k)]).real();
    }
    for (int m = 1; m < n; ++m) {
        const auto um = static_cast<std::size_t>(m);
        cplx temp = buf[um];
        const double sm = std::sqrt(double(m));
        buf[um] = (2.0 * std::conj(a) * temp - sm * buf[um - 1]) / sm;
        w += (rho(m, m) * buf[um]).real();
        for (int k = m + 1; k < n; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            const cplx next = (2.0 * a * buf[uk - 1] - sm * temp) / std::sqrt(double(k));
            temp = buf[uk];
            buf[uk] = next;
            w += 2.0 * (rho(m, k) * buf[uk]).real();
        }
    }
    // The recursion yields the density in (Re beta, Im beta) / sqrt(2) units.
    return 2.0 * w;
}

} // namespace

double wigner_point(const CMat& rho, cplx beta) {
    if (rho.rows() != rho.cols() || rho.rows() == 0) throw std::invalid_argument("Wigner needs a square matrix");
    std::vector<cplx> buf(static_cast<std::size_t>(rho.rows()));
    return wigner_at(rho, beta, buf);
}

WignerGrid wigner_grid(const CMat& rho, const WignerWindow& window, int mode) {
    if (rho.rows() != rho.cols() || rho.rows() == 0) throw std::invalid_argument("Wigner needs a square matrix");
    if (window.nx < 2 || window.np < 2 || !(window.x_max > window.x_min) || !(window.p_max > window.p_min))
        throw std::invalid_argument("invalid Wigner window");
    WignerGrid g;
    g.window = window;
    g.mode = mode;
    g.W.resize(window.nx, window.np);
    std::vector<cplx> buf(static_cast<std::size_t>(rho.rows()));
    for (int i = 0; i < window.nx; ++i)
        for (int j = 0; j < window.np; ++j) g.W(i, j) = wigner_at(rho, cplx(window.x(i), window.p(j)), buf);

    const double peak = g.W.cwiseAbs().maxCoeff();
    for (int i = 0; i < window.nx; ++i) {
        g.boundary_max = std::max({g.boundary_max, std::abs(g.W(i, 0)), std::abs(g.W(i, window.np - 1))});
    }
    for (int j = 0; j < window.np; ++j) {
        g.boundary_max = std::max({g.boundary_max, std::abs(g.W(0, j)), std::abs(g.W(window.nx - 1, j))});
    }
    g.boundary_warning = g.boundary_max > kWignerBoundaryFraction * peak;
    return g;
}

double negativity_volume(const WignerGrid& w) {
    double s = 0.0;
    const auto& win = w.window;
    for (int i = 0; i < win.nx; ++i) {
        const double wx = (i == 0 || i == win.nx - 1) ? 0.5 : 1.0;
        for (int j = 0; j < win.np; ++j) {
            const double wp = (j == 0 || j == win.np - 1) ? 0.5 : 1.0;
            s += wx * wp * std::max(0.0, -w.W(i, j));
        }
    }
    return s * win.dx() * win.dp();
}

void save_wigner_csv(const std::filesystem::path& path, const WignerGrid& w) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    io::configure_stream(out);
    const auto& win = w.window;
    out << io::schema_line("wigner") << '\n';
    out << "# mode=" << (w.mode + 1) << " x_min=" << win.x_min << " x_max=" << win.x_max << " p_min=" << win.p_min
        << " p_max=" << win.p_max << " nx=" << win.nx << " np=" << win.np
        << " boundary_warning=" << (w.boundary_warning ? 1 : 0) << '\n';
    out << "x,p,W\n";
    for (int i = 0; i < win.nx; ++i)
        for (int j = 0; j < win.np; ++j) out << win.x(i) << ',' << win.p(j) << ',' << w.W(i, j) << '\n';
}

double mean_photon(const fock::DensOp& rho, int mode) {
    rho.space.check_mode(mode);
    double s = 0.0;
    for (Eigen::Index k = 0; k < rho.space.dimension(); ++k)
        s += rho.space.occupation(k, mode) * rho.matrix(k, k).real();
    return s;
}

double mean_photon(const fock::Ket& psi, int mode) {
    psi.space.check_mode(mode);
    double s = 0.0, norm = 0.0;
    for (Eigen::Index k = 0; k < psi.space.dimension(); ++k) {
        const double p = std::norm(psi.amplitudes(k));
        s += psi.space.occupation(k, mode) * p;
        norm += p;
    }
    return norm > 0.0 ? s / norm : 0.0;
}

double cat_mean_photon(cplx alpha) {
    const double a2 = std::norm(alpha);
    return a2 * std::tanh(a2);
}

double trace_norm(const CMat& hermitian) {
    Eigen::SelfAdjointEigenSolver<CMat> es(hermitian, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().sum();
}

double trace_distance(const CMat& a, const CMat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("trace distance size mismatch");
    const CMat d = a - b;
    return 0.5 * trace_norm(0.5 * (d + d.adjoint()));
}

double purity(const CMat& rho) { return rho.cwiseAbs2().sum(); }  // Hermitian rho

} // namespace cradle::obs
