// thermal.hpp - finite-temperature coefficient system.
//
// Two effective zero-temperature baths with kernels K1 and K2 give
//   O1 = sum_i x_i(t,s) a_i     + int x'(t,s,s') w*_{s'} ds'
//   O2 = sum_i y_i(t,s) a_i^dag + int y'(t,s,s') z*_{s'} ds'
// with (weights l, h the hopping matrix)
//   dx_i = i (h x)_i + l_i (x . Y) + (l . x) X_i - l_i Y'(t,s)
//   dy_i = -i (h y)_i - l_i (y . X) - (l . y) Y_i - l_i X'(t,s)
//   dx'(t,s,s') = (l . x(t,s)) X'(t,s'),   dy'(t,s,s') = -(l . y(t,s)) Y'(t,s')
// and x(t,t) = y(t,t) = l, x'(t,t,s') = y'(t,t,s') = 0,
// x'(t,s,t) = -(l . x(t,s)), y'(t,s,t) = l . y(t,s).

#pragma once

#include "cradle/env_kernel.hpp"
#include "cradle/fock.hpp"

#include <vector>

namespace cradle::thermal {

struct ThermalOptions {
    std::size_t step_cap = 160;
    int max_iterations = 200;
    double tolerance = 1e-14;
    double overflow_guard = 1e12;
};

struct ThermalCoeffGrids {
    double dt = 0.0;
    std::size_t steps = 0;
    int num_modes = 0;

    std::vector<CMat> x, y;    // x[n] is N x (n+1): columns s_m, m <= n
    std::vector<CVec> X, Y;    // convolutions per step
    std::vector<CVec> Xp, Yp;  // Xp[n](k) = X'(t_n, s'_k), k <= n

    // Three-time grids, flat (steps+1)^3 arrays indexed [n][m][k].
    std::vector<cplx> xp, yp;

    // Largest magnitudes of the thermal terms entering dx: l_i (x . Y) and l_i Y'.
    double max_xy_coupling = 0.0;
    double max_yprime_coupling = 0.0;

    std::size_t index(std::size_t n, std::size_t m, std::size_t k) const {
        const std::size_t s = steps + 1;
        return (n * s + m) * s + k;
    }
    cplx x_prime(std::size_t n, std::size_t m, std::size_t k) const { return xp.at(index(n, m, k)); }
    cplx y_prime(std::size_t n, std::size_t m, std::size_t k) const { return yp.at(index(n, m, k)); }
};

// Bytes needed for the two three-time grids at a given step count.
std::size_t three_time_bytes(std::size_t steps);

// Throws ConfigError naming the required allocation when t_max/dt exceeds the cap.
ThermalCoeffGrids solve_thermal_coeffs(const fock::SystemSpec& spec, const env::ThermalKernelPair& kernels,
                                       double dt, double t_max, const ThermalOptions& opts = {});

} // namespace cradle::thermal
