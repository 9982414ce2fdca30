#include "cradle/coefficients.hpp"
#include "cradle/thermal.hpp"

#include "doctest.h"

#include <cmath>

using namespace cradle;

namespace {

const fock::SystemSpec kSpec{{1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}};
const env::LorentzSpec kEnv{1.0, 0.1, 10.0};

double sup(const CMat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

} // namespace

TEST_SUITE("thermal") {

TEST_CASE("zero-temperature reduction") {
    const double dt = 0.1, t_max = 8.0;
    const auto steps = static_cast<std::size_t>(std::lround(t_max / dt));
    const auto kernels = env::thermal_kernels(kEnv, 1e3, dt, steps + 1);
    const auto g = thermal::solve_thermal_coeffs(kSpec, kernels, dt, t_max);
    coeff::HistoryOptions opts;
    opts.keep_history = true;
    const auto h = coeff::solve_f_history(kSpec, kernels.zero_temperature(), dt, t_max, opts);
    REQUIRE(h.grid.has_value());
    double diff = 0.0;
    for (std::size_t n = 0; n <= steps; ++n) diff = std::max(diff, sup(g.x[n] - h.grid->history[n]));
    CHECK(diff <= 1e-8);
    CHECK(g.max_xy_coupling <= 1e-8);
    CHECK(g.max_yprime_coupling <= 1e-8);
}

TEST_CASE("boundary conditions hold on every appended column") {
    fock::SystemSpec spec = kSpec;
    spec.weights = {1.0, 0.6};
    spec.lambdas = {0.4, 0.0};
    const double dt = 0.1, t_max = 3.0;
    const auto steps = static_cast<std::size_t>(std::lround(t_max / dt));
    const auto kernels = env::thermal_kernels({1.0, 0.5, 2.0}, 1.0, dt, steps + 1);
    const auto g = thermal::solve_thermal_coeffs(spec, kernels, dt, t_max);
    CHECK(g.max_xy_coupling > 1e-4);
    for (std::size_t n = 0; n <= steps; ++n) {
        for (int i = 0; i < 2; ++i) {
            CHECK(g.x[n](i, static_cast<Eigen::Index>(n)) == cplx(spec.weights[static_cast<std::size_t>(i)]));
            CHECK(g.y[n](i, static_cast<Eigen::Index>(n)) == cplx(spec.weights[static_cast<std::size_t>(i)]));
        }
        // The corner s = s' = t belongs to the second family of conditions.
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(g.x_prime(n, n, k) == cplx{});
            CHECK(g.y_prime(n, n, k) == cplx{});
        }
        for (std::size_t m = 0; m <= n; ++m) {
            const auto col = static_cast<Eigen::Index>(m);
            const cplx lx = spec.weights[0] * g.x[n](0, col) + spec.weights[1] * g.x[n](1, col);
            const cplx ly = spec.weights[0] * g.y[n](0, col) + spec.weights[1] * g.y[n](1, col);
            CHECK(g.x_prime(n, m, n) == -lx);
            CHECK(g.y_prime(n, m, n) == ly);
        }
    }
}

TEST_CASE("step cap names the required allocation") {
    const auto kernels = env::thermal_kernels(kEnv, 1.0, 0.1, 400);
    thermal::ThermalOptions opts;
    opts.step_cap = 100;
    try {
        thermal::solve_thermal_coeffs(kSpec, kernels, 0.1, 30.0, opts);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bytes") != std::string::npos);
    }
    CHECK(thermal::three_time_bytes(10) == 2 * 11 * 11 * 11 * sizeof(cplx));
}

}
