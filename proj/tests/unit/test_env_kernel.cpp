#include "cradle/env_kernel.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

using namespace cradle;
using doctest::Approx;

namespace {

// Empirical M[z_{k+lag} conj(z_k)] and mean over many paths, at one reference index.
struct Moments {
    std::vector<cplx> cov;
    cplx mean{};
    cplx pseudo{};  // M[z z]
};

template <class Sampler>
Moments moments(Sampler sample, std::size_t paths, std::size_t ref, std::size_t lags) {
    Moments m;
    m.cov.assign(lags, cplx{});
    for (std::size_t p = 0; p < paths; ++p) {
        const auto path = sample(p);
        m.mean += path.z[ref];
        m.pseudo += path.z[ref] * path.z[ref + 1];
        for (std::size_t l = 0; l < lags; ++l) m.cov[l] += path.z[ref + l] * std::conj(path.z[ref]);
    }
    const double inv = 1.0 / static_cast<double>(paths);
    m.mean *= inv;
    m.pseudo *= inv;
    for (auto& c : m.cov) c *= inv;
    return m;
}

} // namespace

TEST_SUITE("env_kernel") {

TEST_CASE("OU kernel closed form") {
    const auto k = env::ou_kernel({1.0, 0.5, 3.0});
    CHECK(k(0.0).real() == Approx(0.25).epsilon(1e-15));
    CHECK(k(0.0).imag() == 0.0);
    CHECK(k(2.0, 2.0).real() == Approx(0.25));
    const cplx want = 0.25 * std::exp(-cplx(0.5, 3.0) * 1.3);
    CHECK(std::abs(k(1.3) - want) < 1e-15);

    const auto real = env::ou_kernel({1.0, 0.5, 0.0});
    for (double u : {0.0, 0.3, 4.0}) CHECK(real(u).imag() == 0.0);
}

TEST_CASE("kernel Hermitian symmetry and derivative") {
    const env::LorentzSpec spec{1.0, 0.7, 2.5};
    const auto k = env::ou_kernel(spec);
    for (double t : {0.0, 0.4, 3.1})
        for (double s : {0.0, 1.2, 5.0}) CHECK(std::abs(k(t, s) - std::conj(k(s, t))) < 1e-15);
    const double h = 1e-4;
    for (double u : {0.5, 1.0, 2.0}) {
        const cplx d = (k(u + h) - k(u - h)) / (2.0 * h);
        CHECK(std::abs(d + cplx(spec.gamma, spec.delta) * k(u)) <= 1e-6 * std::abs(k(0.0)));
    }
}

TEST_CASE("OU kernel integral approaches Gamma/2 for short memory") {
    for (double gamma : {5.0, 50.0}) {
        const env::LorentzSpec spec{1.0, gamma, 1.0};
        const auto k = env::ou_kernel(spec);
        const double du = 1e-4 / gamma;
        const std::size_t n = static_cast<std::size_t>(40.0 / gamma / du);
        const auto table = env::tabulate(k, du, n + 1);
        cplx integral = 0.5 * (table.front() + table.back());
        for (std::size_t i = 1; i < n; ++i) integral += table[i];
        integral *= du;
        const cplx exact = spec.gamma_big * gamma / (2.0 * cplx(gamma, spec.delta));
        CHECK(std::abs(integral - exact) < 1e-6);
        CHECK(std::abs(exact - 0.5) < 0.5 / gamma + 1e-12);
    }
}

TEST_CASE("invalid Lorentzian parameters") {
    CHECK_THROWS_AS(env::ou_kernel({1.0, 0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(env::ou_kernel({-1.0, 1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(env::markovian_kernel(-0.5), std::invalid_argument);
}

TEST_CASE("Markovian sentinel is never evaluated") {
    const auto k = env::markovian_kernel(1.0);
    CHECK(k.is_delta());
    CHECK(k.lorentz().gamma_big == 1.0);
    CHECK_THROWS_AS(k(0.5), std::logic_error);
}

TEST_CASE("tabulated kernels interpolate linearly and round-trip through CSV") {
    const auto k = env::EnvKernel::tabulated(0.5, {cplx(1.0, 0.0), cplx(0.0, 1.0), cplx(-1.0, 0.0)});
    CHECK(std::abs(k(0.25) - cplx(0.5, 0.5)) < 1e-15);
    CHECK(std::abs(k(-0.25) - cplx(0.5, -0.5)) < 1e-15);
    CHECK_THROWS_AS(k(1.5), std::out_of_range);

    const auto path = std::filesystem::temp_directory_path() / "cradle_kernel_roundtrip.csv";
    const std::vector<double> lags{0.0, 0.1, 0.35};
    const std::vector<cplx> vals{cplx(0.25, 0.0), cplx(0.2, -0.05), cplx(0.1 / 3.0, 1e-17)};
    env::save_kernel_csv(path, lags, vals);
    const auto back = env::load_kernel_csv(path);
    for (std::size_t i = 0; i < lags.size(); ++i) CHECK(back(lags[i]) == vals[i]);
    std::filesystem::remove(path);
}

TEST_CASE("Bose-Einstein occupation") {
    CHECK(env::bose_einstein(1.0, 1.0) == Approx(1.0 / (std::exp(1.0) - 1.0)).epsilon(1e-15));
    CHECK(env::bose_einstein(1.0, 1.0) == Approx(0.58198).epsilon(1e-5));
    CHECK(env::bose_einstein(1.0, 1e3) == 0.0);
}

TEST_CASE("thermal kernels in the zero-temperature limit") {
    const env::LorentzSpec spec{1.0, 1.0, 5.0};
    const double du = 0.1;
    const auto pair = env::thermal_kernels(spec, 1e4, du, 40);
    const auto ou = env::ou_kernel(spec);
    const double tail = env::lorentz_tail_mass(spec, pair.omega_min, pair.omega_max) * 0.5 * spec.gamma_big * spec.gamma;
    for (std::size_t k = 0; k < pair.k1.size(); ++k) {
        CHECK(std::abs(pair.k2[k]) <= 1e-10);
        CHECK(std::abs(pair.k1[k] - ou(du * static_cast<double>(k))) <= tail + 1e-6);
    }
}

TEST_CASE("thermal kernels at finite temperature") {
    const env::LorentzSpec spec{1.0, 0.5, 2.0};
    const auto pair = env::thermal_kernels(spec, 1.0, 0.1, 20);
    CHECK(pair.k1[0].real() > 0.0);
    CHECK(pair.k2[0].real() > 0.0);
    CHECK(std::abs(pair.k1[0].imag()) < 1e-12);
    CHECK(std::abs(pair.k2[0].imag()) < 1e-12);
    // K1(0) - K2(0) is the zero-temperature mass on the same quadrature.
    CHECK(std::abs(pair.k1[0] - pair.k2[0] - pair.k_zero[0]) < 1e-8);
    CHECK_THROWS_AS(env::thermal_kernels(spec, 0.0, 0.1, 20), std::invalid_argument);
}

TEST_CASE("OU noise is deterministic per seed") {
    const env::LorentzSpec spec{1.0, 0.1, 10.0};
    const auto a = env::sample_ou_noise(spec, 0.025, 500, 42);
    const auto b = env::sample_ou_noise(spec, 0.025, 500, 42);
    const auto c = env::sample_ou_noise(spec, 0.025, 500, 43);
    CHECK(a.z == b.z);
    CHECK(a.z != c.z);
    CHECK(a.num_steps() == 500);
}

TEST_CASE("OU noise statistics") {
    const env::LorentzSpec spec{1.0, 0.5, 2.0};
    const auto kernel = env::ou_kernel(spec);
    const double dt = 0.2;
    const std::size_t paths = 100000, ref = 3, lags = 6;
    const auto m = moments([&](std::size_t p) { return env::sample_ou_noise(spec, dt, ref + lags, env::derive_seed(7, p)); },
                           paths, ref, lags);
    const double k0 = kernel(0.0).real();
    const double tol = 5.0 / std::sqrt(static_cast<double>(paths)) * k0;
    CHECK(std::abs(m.mean) <= 5.0 * std::sqrt(k0 / static_cast<double>(paths)));
    CHECK(std::abs(m.pseudo) <= tol);
    for (std::size_t l = 0; l < lags; ++l) CHECK(std::abs(m.cov[l] - kernel(dt * static_cast<double>(l))) <= tol);
}

TEST_CASE("circulant sampler matches the OU generator") {
    const env::LorentzSpec spec{1.0, 0.5, 2.0};
    const auto kernel = env::ou_kernel(spec);
    const double dt = 0.2;
    const std::size_t paths = 40000, ref = 5, lags = 6, steps = 40;
    const auto circ = moments([&](std::size_t p) { return env::sample_noise_from_kernel(kernel, dt, steps, env::derive_seed(11, p)); },
                              paths, ref, lags);
    const auto ar = moments([&](std::size_t p) { return env::sample_ou_noise(spec, dt, steps, env::derive_seed(13, p)); },
                            paths, ref, lags);
    const double tol = 5.0 / std::sqrt(static_cast<double>(paths)) * kernel(0.0).real();
    for (std::size_t l = 0; l < lags; ++l) {
        CHECK(std::abs(circ.cov[l] - kernel(dt * static_cast<double>(l))) <= tol);
        CHECK(std::abs(circ.cov[l] - ar.cov[l]) <= 2.0 * tol);
    }
    const auto again = env::sample_noise_from_kernel(kernel, dt, steps, 99);
    CHECK(again.z == env::sample_noise_from_kernel(kernel, dt, steps, 99).z);
}

TEST_CASE("white-noise table gives independent samples") {
    std::vector<cplx> cov(33, cplx{});
    cov[0] = 1.0;
    const std::size_t paths = 20000;
    double var = 0.0;
    cplx lag1{};
    for (std::size_t p = 0; p < paths; ++p) {
        const auto z = env::sample_noise_from_kernel(cov, 0.1, env::derive_seed(3, p)).z;
        var += std::norm(z[10]);
        lag1 += z[11] * std::conj(z[10]);
    }
    const double tol = 5.0 / std::sqrt(static_cast<double>(paths));
    CHECK(std::abs(var / paths - 1.0) <= tol);
    CHECK(std::abs(lag1 / static_cast<double>(paths)) <= tol);
}

TEST_CASE("zero kernel gives a zero path") {
    const std::vector<cplx> cov(17, cplx{});
    const auto path = env::sample_noise_from_kernel(cov, 0.1, 5);
    for (const auto& z : path.z) CHECK(z == cplx{});
}

TEST_CASE("non-embeddable covariance names the negative fraction") {
    const std::vector<cplx> cov{1.0, 2.0, 1.0};
    try {
        env::sample_noise_from_kernel(cov, 0.1, 1);
        FAIL("expected a NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("negative spectral fraction") != std::string::npos);
    }
}

TEST_CASE("derived seeds are distinct") {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 1000; ++i) seeds.push_back(env::derive_seed(1, i));
    std::sort(seeds.begin(), seeds.end());
    CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
    CHECK(env::derive_seed(1, 0) != env::derive_seed(2, 0));
}

}
