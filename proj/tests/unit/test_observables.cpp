#include "cradle/fock.hpp"
#include "cradle/observables.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>

using namespace cradle;
using doctest::Approx;

namespace {

constexpr int kNc = 30;

CMat dyad(const CVec& v) { return v * v.adjoint(); }

CMat cat_rho(cplx alpha, double theta = 0.0) { return dyad(fock::cat_amplitudes(kNc, alpha, theta)); }

// Negativity volume of the alpha = 2 even cat on the default window at twice the
// default resolution (241 x 241), frozen as a regression constant.
constexpr double kCatNegativity = 0.2926461067;

} // namespace

TEST_SUITE("observables") {

TEST_CASE("fidelity of a rotated cat is one") {
    for (double theta : {0.0, 0.3, 1.7, 4.0}) {
        const auto r = obs::transfer_fidelity(cat_rho(2.0, theta), 2.0);
        CHECK(r.fidelity == Approx(1.0).epsilon(1e-8));
        CHECK(r.fidelity >= r.coarse_max);
    }
}

TEST_CASE("fidelity of the vacuum") {
    CMat vac = CMat::Zero(kNc, kNc);
    vac(0, 0) = 1.0;
    const double want = 4.0 * std::exp(-4.0) / (2.0 * (1.0 + std::exp(-8.0)));
    CHECK(obs::transfer_fidelity(vac, 2.0).fidelity == Approx(want).epsilon(1e-8));
    CHECK(want == Approx(0.03663).epsilon(1e-3));
}

TEST_CASE("fidelity of one coherent branch") {
    const CMat rho = dyad(fock::coherent_amplitudes(kNc, 2.0));
    const double n = 2.0 * (1.0 + std::exp(-8.0));
    const double want = std::pow(1.0 + std::exp(-8.0), 2) / n;
    CHECK(obs::transfer_fidelity(rho, 2.0).fidelity == Approx(want).epsilon(1e-8));
    CHECK(want == Approx(0.5).epsilon(2.0 * std::exp(-8.0)));
}

TEST_CASE("fidelity bounds and refinement") {
    CMat rnd = CMat::Random(kNc, kNc);
    rnd = rnd * rnd.adjoint();
    rnd /= rnd.trace();
    for (int grid : {16, 64, 256}) {
        const auto r = obs::transfer_fidelity(rnd, cplx(1.5, 0.5), grid);
        CHECK(r.fidelity >= r.coarse_max);
        CHECK(r.fidelity >= -1e-9);
        CHECK(r.fidelity <= 1.0 + 1e-9);
        CHECK(r.theta >= 0.0);
        CHECK(r.theta < 2.0 * kPi);
    }
    CHECK_THROWS_AS(obs::transfer_fidelity(CMat::Zero(3, 4), 2.0), std::invalid_argument);
}

TEST_CASE("vacuum Wigner function") {
    CMat vac = CMat::Zero(kNc, kNc);
    vac(0, 0) = 1.0;
    CHECK(obs::wigner_point(vac, 0.0) == Approx(2.0 / kPi).epsilon(1e-14));
    const cplx b(0.7, -0.4);
    CHECK(obs::wigner_point(vac, b) == Approx(2.0 / kPi * std::exp(-2.0 * std::norm(b))).epsilon(1e-12));
    const auto w = obs::wigner_grid(vac);
    CHECK(obs::negativity_volume(w) == 0.0);
    CHECK(w.integral() == Approx(1.0).epsilon(0.02));
    CHECK_FALSE(w.boundary_warning);
}

TEST_CASE("even cat Wigner function") {
    const CMat rho = cat_rho(2.0);
    CHECK(obs::wigner_point(rho, 0.0) == Approx(2.0 / kPi).epsilon(1e-10));
    // Fringes along the imaginary axis: W(i p) ~ cos(4 alpha p).
    CHECK(obs::wigner_point(rho, cplx(0.0, kPi / 8.0)) < -0.1);
    const auto w = obs::wigner_grid(rho, obs::WignerWindow::around(2.0));
    CHECK(w.integral() == Approx(1.0).epsilon(0.02));
    const double neg = obs::negativity_volume(w);
    CHECK(neg > 0.0);
    CHECK(neg == Approx(kCatNegativity).epsilon(0.05));
    const auto fine = obs::wigner_grid(rho, obs::WignerWindow::around(2.0, 241));
    CHECK(obs::negativity_volume(fine) == Approx(kCatNegativity).epsilon(1e-8));
}

TEST_CASE("coherent mixture has no fringes") {
    // A larger cutoff keeps the truncation ripples of the coherent states below 1e-10.
    const CMat mix = 0.5 * (dyad(fock::coherent_amplitudes(40, 2.0)) + dyad(fock::coherent_amplitudes(40, -2.0)));
    const auto w = obs::wigner_grid(mix, obs::WignerWindow::around(2.0));
    CHECK(w.W.minCoeff() >= -1e-10);
    CHECK(obs::negativity_volume(w) <= 1e-10);
}

TEST_CASE("Wigner grid rotates with the state") {
    const auto win = obs::WignerWindow::around(2.0, 61);
    const auto w0 = obs::wigner_grid(cat_rho(cplx(2.0, 0.5)), win);
    const auto w1 = obs::wigner_grid(cat_rho(cplx(2.0, 0.5), kPi / 2.0), win);
    // W_rot(beta) = W(i beta): the point (x, p) maps to (-p, x).
    double diff = 0.0;
    const int n = win.nx;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) diff = std::max(diff, std::abs(w1.W(i, j) - w0.W(n - 1 - j, i)));
    CHECK(diff <= 1e-6);
}

TEST_CASE("small windows raise the boundary warning") {
    obs::WignerWindow win;
    win.x_min = win.p_min = -1.0;
    win.x_max = win.p_max = 1.0;
    win.nx = win.np = 21;
    const auto w = obs::wigner_grid(cat_rho(2.0), win);
    CHECK(w.boundary_warning);
}

TEST_CASE("mean photon numbers") {
    const fock::FockSpace space(2, kNc);
    CHECK(obs::mean_photon(fock::vacuum(space), 0) == 0.0);
    CHECK(obs::mean_photon(fock::coherent_state(space, 0, 2.0), 0) == Approx(4.0).epsilon(1e-6));
    const auto cat = fock::cat_state(space, 1, 2.0);
    const double want = 4.0 * (1.0 - std::exp(-8.0)) / (1.0 + std::exp(-8.0));
    CHECK(obs::mean_photon(cat, 1) == Approx(want).epsilon(1e-8));
    CHECK(obs::cat_mean_photon(2.0) == Approx(want).epsilon(1e-14));
    CHECK(obs::mean_photon(fock::projector(cat), 1) == Approx(want).epsilon(1e-8));
}

TEST_CASE("trace distance and purity") {
    const CMat a = cat_rho(2.0);
    CHECK(obs::trace_distance(a, a) == Approx(0.0).epsilon(1e-12));
    CHECK(obs::purity(a) == Approx(1.0).epsilon(1e-12));
    CMat p0 = CMat::Zero(kNc, kNc), p1 = CMat::Zero(kNc, kNc);
    p0(0, 0) = 1.0;
    p1(1, 1) = 1.0;
    CHECK(obs::trace_distance(p0, p1) == Approx(1.0).epsilon(1e-12));
    CHECK(obs::purity(0.5 * (p0 + p1)) == Approx(0.5).epsilon(1e-12));
}

TEST_CASE("fidelity CSV round trip") {
    obs::FidelityCurve c;
    c.t = {0.0, 0.5, 1.0};
    c.fidelity = {{1.0, 0.5, 1.0 / 3.0}, {0.0366, 0.2, 0.71}};
    c.theta = {{0.0, 0.1, 0.2}, {3.0, 2.0, 1.0}};
    const auto path = std::filesystem::temp_directory_path() / "cradle_fidelity_roundtrip.csv";
    obs::save_fidelity_csv(path, c);
    const auto back = obs::load_fidelity_csv(path);
    CHECK(back.t == c.t);
    CHECK(back.fidelity == c.fidelity);
    CHECK(back.theta == c.theta);
    CHECK(c.argmax(1) == 2);
    CHECK(c.max_fidelity(1) == 0.71);
    std::filesystem::remove(path);
}

}
