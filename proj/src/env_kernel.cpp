#include "cradle/env_kernel.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace cradle::env {

void LorentzSpec::validate() const {
    if (!(gamma_big >= 0.0) || !std::isfinite(gamma_big))
        throw std::invalid_argument("Lorentzian spectrum needs Gamma >= 0");
    if (!(gamma > 0.0) || !std::isfinite(gamma))
        throw std::invalid_argument("Lorentzian spectrum needs gamma > 0");
    if (!std::isfinite(delta)) throw std::invalid_argument("Lorentzian spectrum needs a finite Delta");
}

double LorentzSpec::spectral_density(double omega) const {
    const double d = omega - delta;
    return gamma_big * gamma * gamma / (2.0 * kPi) / (d * d + gamma * gamma);
}

const char* to_string(KernelKind kind) {
    switch (kind) {
    case KernelKind::ou: return "ou";
    case KernelKind::markovian_delta: return "markovian";
    case KernelKind::tabulated: return "tabulated";
    case KernelKind::thermal: return "thermal";
    }
    return "unknown";
}

EnvKernel EnvKernel::tabulated(double du, std::vector<cplx> values, KernelKind kind) {
    if (!(du > 0.0)) throw std::invalid_argument("tabulated kernel needs du > 0");
    if (values.empty()) throw std::invalid_argument("tabulated kernel needs at least one value");
    EnvKernel k;
    k.kind_ = kind;
    k.uniform_du_ = du;
    k.values_ = std::move(values);
    k.lags_.resize(k.values_.size());
    for (std::size_t i = 0; i < k.lags_.size(); ++i) k.lags_[i] = static_cast<double>(i) * du;
    return k;
}

EnvKernel EnvKernel::tabulated(std::vector<double> lags, std::vector<cplx> values) {
    if (lags.size() != values.size() || lags.empty())
        throw std::invalid_argument("tabulated kernel needs matching, non-empty lag and value arrays");
    if (std::abs(lags.front()) > 1e-12) throw std::invalid_argument("tabulated kernel lags must start at 0");
    for (std::size_t i = 1; i < lags.size(); ++i)
        if (!(lags[i] > lags[i - 1])) throw std::invalid_argument("tabulated kernel lags must increase");
    EnvKernel k;
    k.kind_ = KernelKind::tabulated;
    k.lags_ = std::move(lags);
    k.values_ = std::move(values);
    return k;
}

const LorentzSpec& EnvKernel::lorentz() const {
    if (!has_lorentz_) throw std::logic_error("kernel has no Lorentzian parameters");
    return lorentz_;
}

double EnvKernel::max_lag() const noexcept {
    if (kind_ == KernelKind::ou || kind_ == KernelKind::markovian_delta)
        return std::numeric_limits<double>::infinity();
    return lags_.back();
}

cplx EnvKernel::operator()(double lag) const {
    if (lag < 0.0) return std::conj((*this)(-lag));
    switch (kind_) {
    case KernelKind::ou: {
        const auto& p = lorentz_;
        return 0.5 * p.gamma_big * p.gamma * std::exp(-cplx(p.gamma, p.delta) * lag);
    }
    case KernelKind::markovian_delta:
        throw std::logic_error("delta kernel cannot be evaluated pointwise");
    default: break;
    }
    const std::size_t n = values_.size();
    if (n == 1 || lag >= lags_.back()) {
        if (lag > lags_.back() * (1.0 + 1e-12) + 1e-300)
            throw std::out_of_range("lag beyond tabulated kernel range");
        return values_.back();
    }
    std::size_t i;
    if (uniform_du_ > 0.0) {
        i = std::min(static_cast<std::size_t>(lag / uniform_du_), n - 2);
    } else {
        i = static_cast<std::size_t>(std::upper_bound(lags_.begin(), lags_.end(), lag) - lags_.begin()) - 1;
        i = std::min(i, n - 2);
    }
    const double w = (lag - lags_[i]) / (lags_[i + 1] - lags_[i]);
    return (1.0 - w) * values_[i] + w * values_[i + 1];
}

EnvKernel ou_kernel(const LorentzSpec& spec) {
    spec.validate();
    EnvKernel k;
    k.kind_ = KernelKind::ou;
    k.lorentz_ = spec;
    k.has_lorentz_ = true;
    return k;
}

EnvKernel markovian_kernel(double gamma_big) {
    if (!(gamma_big >= 0.0)) throw std::invalid_argument("Markovian kernel needs Gamma >= 0");
    EnvKernel k;
    k.kind_ = KernelKind::markovian_delta;
    k.lorentz_ = LorentzSpec{gamma_big, std::numeric_limits<double>::infinity(), 0.0};
    k.has_lorentz_ = true;
    return k;
}

std::vector<cplx> tabulate(const EnvKernel& kernel, double du, std::size_t n) {
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = kernel(static_cast<double>(k) * du);
    return out;
}

EnvKernel load_kernel_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open kernel file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("kernel file is empty: " + path.string());
    std::vector<double> lags;
    std::vector<cplx> values;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double u, re, im;
        if (!(ss >> u >> re >> im))
            throw std::runtime_error("malformed kernel row " + std::to_string(row) + " in " + path.string());
        lags.push_back(u);
        values.emplace_back(re, im);
    }
    return EnvKernel::tabulated(std::move(lags), std::move(values));
}

void save_kernel_csv(const std::filesystem::path& path, const std::vector<double>& lags,
                     const std::vector<cplx>& values) {
    if (lags.size() != values.size()) throw std::invalid_argument("lag/value size mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write kernel file " + path.string());
    out << "u,re_K,im_K\n" << std::setprecision(17);
    for (std::size_t i = 0; i < lags.size(); ++i)
        out << lags[i] << ',' << values[i].real() << ',' << values[i].imag() << '\n';
}

double bose_einstein(double omega, double beta) {
    // Printed in the source derivation as 1/(exp(-beta w) - 1); the positive form is used.
    const double x = beta * omega;
    if (x > 700.0) return 0.0;
    return 1.0 / std::expm1(x);
}

double lorentz_tail_mass(const LorentzSpec& spec, double omega_min, double omega_max) {
    const double inside = (std::atan((omega_max - spec.delta) / spec.gamma) -
                           std::atan((omega_min - spec.delta) / spec.gamma)) / kPi;
    return std::max(0.0, 1.0 - inside);
}

namespace {

// Trapezoid sums over phi with w = Delta + gamma tan(phi), which flattens the
// Lorentzian: g(w) dw = (Gamma gamma / 2pi) dphi.
struct ThermalIntegrand {
    const LorentzSpec& spec;
    double beta;
    double du;
    std::size_t num_lags;

    // Adds weight * integrand(phi) for every lag into the three accumulators.
    void add(double phi, double weight, std::vector<cplx>& s1, std::vector<cplx>& s2,
             std::vector<cplx>& s0) const {
        const double w = spec.delta + spec.gamma * std::tan(phi);
        const double n = bose_einstein(w, beta);
        const cplx step = std::exp(cplx(0.0, -w * du));
        cplx ph{1.0, 0.0};
        for (std::size_t k = 0; k < num_lags; ++k) {
            s0[k] += weight * ph;
            s1[k] += weight * (n + 1.0) * ph;
            s2[k] += weight * n * std::conj(ph);
            ph *= step;
            if ((k & 63u) == 63u) ph = std::exp(cplx(0.0, -w * du * static_cast<double>(k + 1)));
        }
    }
};

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

ThermalKernelPair thermal_kernels(const LorentzSpec& spec, double beta, double du, std::size_t num_lags,
                                  const QuadratureConfig& quad) {
    spec.validate();
    if (!(beta > 0.0)) throw std::invalid_argument("thermal kernels need beta > 0");
    if (!(du > 0.0) || num_lags == 0) throw std::invalid_argument("thermal kernels need du > 0 and lags");
    if (quad.initial_panels < 2 || quad.max_refinements < 1)
        throw std::invalid_argument("quadrature needs at least 2 panels and one refinement");

    ThermalKernelPair out;
    out.beta = beta;
    out.du = du;
    out.omega_min = std::max(1e-6, quad.omega_floor);
    out.omega_max = spec.delta + quad.omega_span * spec.gamma;
    if (!(out.omega_max > out.omega_min))
        throw std::invalid_argument("thermal quadrature window is empty (Delta + span*gamma <= omega floor)");

    const double a = std::atan((out.omega_min - spec.delta) / spec.gamma);
    const double b = std::atan((out.omega_max - spec.delta) / spec.gamma);
    const double pref = spec.gamma_big * spec.gamma / (2.0 * kPi);
    const ThermalIntegrand f{spec, beta, du, num_lags};

    // Running trapezoid sums; each refinement only adds the new midpoints.
    std::vector<cplx> s1(num_lags), s2(num_lags), s0(num_lags);
    auto panels = static_cast<std::size_t>(quad.initial_panels);
    double h = (b - a) / static_cast<double>(panels);
    for (std::size_t j = 0; j <= panels; ++j)
        f.add(a + static_cast<double>(j) * h, (j == 0 || j == panels) ? 0.5 : 1.0, s1, s2, s0);

    auto scaled = [&](const std::vector<cplx>& s, double hh) {
        std::vector<cplx> r(s.size());
        for (std::size_t k = 0; k < s.size(); ++k) r[k] = pref * hh * s[k];
        return r;
    };
    // Richardson-accelerated trapezoid: the error series is even in h.
    std::vector<cplx> t1 = scaled(s1, h), t2 = scaled(s2, h), t0 = scaled(s0, h);
    std::vector<cplx> r1, r2, r0;
    double scale = std::max(std::abs(t1[0]), 1e-300);
    for (int level = 0; level < quad.max_refinements; ++level) {
        for (std::size_t j = 0; j < panels; ++j) f.add(a + (static_cast<double>(j) + 0.5) * h, 1.0, s1, s2, s0);
        panels *= 2;
        h *= 0.5;
        auto n1 = scaled(s1, h), n2 = scaled(s2, h), n0 = scaled(s0, h);
        auto extrap = [](const std::vector<cplx>& fine, const std::vector<cplx>& coarse) {
            std::vector<cplx> r(fine.size());
            for (std::size_t k = 0; k < fine.size(); ++k) r[k] = (4.0 * fine[k] - coarse[k]) / 3.0;
            return r;
        };
        auto e1 = extrap(n1, t1), e2 = extrap(n2, t2), e0 = extrap(n0, t0);
        scale = std::max(std::abs(e1[0]), 1e-300);
        if (!r1.empty()) {
            const double change =
                std::max({max_abs_diff(e1, r1), max_abs_diff(e2, r2), max_abs_diff(e0, r0)});
            if (change <= quad.rel_tol * scale) {
                out.k1 = std::move(e1);
                out.k2 = std::move(e2);
                out.k_zero = std::move(e0);
                // K(0) is real analytically; drop the rounding residue.
                out.k1[0] = out.k1[0].real();
                out.k2[0] = out.k2[0].real();
                out.k_zero[0] = out.k_zero[0].real();
                return out;
            }
        }
        t1 = std::move(n1), t2 = std::move(n2), t0 = std::move(n0);
        r1 = std::move(e1), r2 = std::move(e2), r0 = std::move(e0);
    }
    throw NumericalError("thermal kernel quadrature did not reach relative tolerance " +
                         std::to_string(quad.rel_tol) + " after " + std::to_string(quad.max_refinements) +
                         " refinements");
}

namespace {

cplx complex_normal(std::mt19937_64& rng, std::normal_distribution<double>& nd) {
    const double re = nd(rng);
    const double im = nd(rng);
    return cplx(re, im) * std::sqrt(0.5);
}

} // namespace

NoisePath sample_ou_noise(const LorentzSpec& spec, double dt, std::size_t steps, std::uint64_t seed) {
    spec.validate();
    if (!(dt > 0.0)) throw std::invalid_argument("noise sampling needs dt > 0");
    NoisePath path;
    path.dt = dt;
    path.seed = seed;
    path.z.resize(steps + 1);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    const double k0 = 0.5 * spec.gamma_big * spec.gamma;
    const cplx phi = std::exp(-cplx(spec.gamma, spec.delta) * dt);
    const double innov = std::sqrt(k0 * -std::expm1(-2.0 * spec.gamma * dt));
    path.z[0] = std::sqrt(k0) * complex_normal(rng, nd);
    for (std::size_t k = 0; k < steps; ++k) path.z[k + 1] = phi * path.z[k] + innov * complex_normal(rng, nd);
    return path;
}

NoisePath sample_noise_from_kernel(std::span<const cplx> covariance, double dt, std::uint64_t seed,
                                   double tolerance) {
    if (!(dt > 0.0)) throw std::invalid_argument("noise sampling needs dt > 0");
    if (covariance.empty()) throw std::invalid_argument("noise sampling needs a covariance table");
    const std::size_t n = covariance.size();
    NoisePath path;
    path.dt = dt;
    path.seed = seed;

    const std::size_t m = n == 1 ? 1 : 2 * (n - 1);
    std::vector<cplx> col(m);
    for (std::size_t k = 0; k < n; ++k) col[k] = covariance[k];
    for (std::size_t k = 1; k + 1 < n; ++k) col[m - k] = std::conj(covariance[k]);

    Eigen::FFT<double> fft;
    std::vector<cplx> spectrum;
    fft.fwd(spectrum, col);

    double negative = 0.0, total = 0.0;
    for (const auto& v : spectrum) {
        negative += std::max(0.0, -v.real());
        total += std::abs(v.real());
    }
    const double fraction = total > 0.0 ? negative / total : 0.0;
    if (fraction > tolerance) {
        std::ostringstream msg;
        msg << "covariance is not circulant-embeddable: negative spectral fraction " << fraction
            << " exceeds tolerance " << tolerance;
        throw NumericalError(msg.str());
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<cplx> weighted(m);
    for (std::size_t k = 0; k < m; ++k)
        weighted[k] = std::sqrt(std::max(0.0, spectrum[k].real())) * complex_normal(rng, nd);
    std::vector<cplx> field;
    fft.inv(field, weighted);  // includes the 1/m factor
    const double norm = std::sqrt(static_cast<double>(m));
    path.z.resize(n);
    for (std::size_t k = 0; k < n; ++k) path.z[k] = norm * field[k];
    return path;
}

NoisePath sample_noise_from_kernel(const EnvKernel& kernel, double dt, std::size_t steps, std::uint64_t seed,
                                   double tolerance) {
    if (kernel.is_delta()) throw std::logic_error("delta kernel noise is not sampled");
    const auto table = tabulate(kernel, dt, steps + 1);
    return sample_noise_from_kernel(std::span<const cplx>(table), dt, seed, tolerance);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t x = master + 0x9E3779B97F4A7C15ull * (index + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

} // namespace cradle::env
