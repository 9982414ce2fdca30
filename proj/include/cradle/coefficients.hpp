// coefficients.hpp - O-operator coefficient solvers.
//
// With environment weights l the zero-temperature O operator is sum_i f_i(t,s) a_i,
//   d/dt f_i = i Omega_i f_i + i (lambda_i f_{i+1} + lambda_{i-1} f_{i-1}) + (l . f) F_i,
//   f_i(s,s) = l_i,   F_i(t) = int_0^t K(t,s) f_i(t,s) ds.
// For unit weights this is the usual unweighted system.

#pragma once

#include "cradle/env_kernel.hpp"
#include "cradle/fock.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cradle::coeff {

enum class Provenance { history_grid, ou_fast, markov_analytic, thermal, imported };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct CoefficientTable {
    double dt = 0.0;
    std::vector<CVec> F;  // F[k] = (F_1..F_N)(k dt)
    Provenance provenance = Provenance::history_grid;

    std::size_t num_steps() const noexcept { return F.empty() ? 0 : F.size() - 1; }
    int num_modes() const noexcept { return F.empty() ? 0 : static_cast<int>(F.front().size()); }
    double t_max() const noexcept { return dt * static_cast<double>(num_steps()); }
    // Linear interpolation in t; throws std::out_of_range beyond the table.
    CVec at(double t) const;
};

// Final columns f(t_n, s_m), m = 0..n, stored as an N x (n+1) matrix. When
// requested, every intermediate step is kept as well (steps^2 N memory).
struct HistoryGrid {
    double dt = 0.0;
    std::size_t step = 0;
    CMat columns;
    std::vector<CMat> history;
};

struct HistoryOptions {
    bool keep_final_grid = false;
    bool keep_history = false;
    int max_corrector_iterations = 100;
    double corrector_tolerance = 1e-14;
    double overflow_guard = 1e12;
};

struct HistoryResult {
    CoefficientTable table;
    std::optional<HistoryGrid> grid;
    int max_corrector_iterations_used = 0;
};

// Second-order history-grid solver: every column is advanced with the trapezoidal
// rule and F(t_{n+1}) is iterated to self-consistency (Heun predictor, corrector
// repeated to convergence). Delta kernels return the analytic Markov table.
HistoryResult solve_f_history(const fock::SystemSpec& spec, const env::EnvKernel& kernel, double dt,
                              double t_max, const HistoryOptions& opts = {});

// Richardson combination (4 F_{dt/2} - F_dt) / 3 on the coarse grid.
CoefficientTable richardson(const CoefficientTable& coarse, const CoefficientTable& fine);

// Runs the history solver at dt and dt/2 and returns the extrapolated table; the
// reported change is the sup-norm difference between the two raw tables.
struct HalvingResult {
    CoefficientTable coarse;
    CoefficientTable fine;
    CoefficientTable extrapolated;
    double sup_change = 0.0;
};
HalvingResult solve_f_history_refined(const fock::SystemSpec& spec, const env::EnvKernel& kernel, double dt,
                                      double t_max, const HistoryOptions& opts = {});

// Closed OU system
//   dF_i/dt = (Gamma gamma / 2) l_i - (gamma + i Delta) F_i + i Omega_i F_i
//             + i (lambda_i F_{i+1} + lambda_{i-1} F_{i-1}) + F_i (l . F),
// integrated with classical RK4.
CoefficientTable solve_F_ou_fast(const fock::SystemSpec& spec, const env::LorentzSpec& lorentz, double dt,
                                 double t_max, double overflow_guard = 1e12);

// F_i = Gamma l_i / 2 on every step.
CoefficientTable markov_coefficients(const fock::SystemSpec& spec, double gamma_big, double dt, double t_max);

// Dispatches on the kernel kind: delta -> analytic, OU -> fast path, otherwise history.
CoefficientTable solve_coefficients(const fock::SystemSpec& spec, const env::EnvKernel& kernel, double dt,
                                    double t_max);

struct CouplingRatio {
    std::vector<double> re;      // tail mean of Re F_i
    std::vector<double> im;      // tail mean of Im F_i
    std::vector<double> ratio;   // Im / Re (0 when Re and Im both vanish)
    double drift = 0.0;          // max relative change between the window halves
    bool stationary = true;      // drift < 1%
};

// Long-time averages over the trailing `window` fraction of the table.
CouplingRatio effective_coupling_ratio(const CoefficientTable& table, double window = 0.2);

// Sup-norm of |a - b| / max|b| over the common grid (tables must share dt).
double relative_sup_difference(const CoefficientTable& a, const CoefficientTable& b);

// CSV with a schema line, a header and columns t, re_F1, im_F1, ...
void save_table_csv(const std::filesystem::path& path, const CoefficientTable& table);
CoefficientTable load_table_csv(const std::filesystem::path& path);

} // namespace cradle::coeff
