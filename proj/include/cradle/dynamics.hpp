// dynamics.hpp - master-equation and NMQSD-trajectory propagation.
//
// By default both paths integrate in the interaction picture of the closed system:
// exp(-i H_S h) is applied exactly (H_S is block diagonal in the total photon number)
// and RK4 only sees the environment terms (integrating-factor RK4). The older
// frames rotating with H0 = sum_i Omega_i n_i, or none at all, remain available.
// Recorded states are always returned in the lab frame.
//
// Master equation: d rho/dt = V + V^dag with
//   V = -i H rho - A^dag (Obar rho) + (Obar rho) A^dag,   Obar = sum_k F_k a_k.
// Trajectory:     d psi/dt = [-i H + conj(z_t) A - A^dag Obar] psi.

#pragma once

#include "cradle/coefficients.hpp"
#include "cradle/env_kernel.hpp"
#include "cradle/fock.hpp"
#include "cradle/observables.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cradle::dyn {

enum class Frame { interaction, rotating, lab };
const char* to_string(Frame f);
Frame frame_from_string(const std::string& s);

// Time-dependent operator coefficients in the working frame:
//   A = sum alpha_k a_k, Obar = sum phi_k a_k,
//   H = diag(E) + sum_i (hop_i a_i^dag a_{i+1} + h.c.)
// E = 0 in the rotating frame; E = 0 and hop = 0 in the interaction frame, where H_S
// is handled by FreePropagator.
struct OperatorCoefficients {
    std::vector<cplx> alpha;
    std::vector<cplx> phi;
    std::vector<cplx> hop;
};

// Largest total photon number present in a state. Neither H_S nor the environment
// terms raise it, so {total <= n} is invariant and propagation can be restricted to it.
int max_excitation(const fock::FockSpace& space, const CMat& rho);
int max_excitation(const fock::FockSpace& space, const CVec& psi);

// Shared, read-only description of the generator for one (spec, space, frame).
// Matrices and kets handed to the generator live on the active basis: the Fock
// states with total photon number <= max_total (all states when max_total < 0).
class Generator {
public:
    Generator(const fock::SystemSpec& spec, const fock::FockSpace& space, Frame frame = Frame::interaction,
              int max_total = -1);

    const fock::SystemSpec& spec() const noexcept { return spec_; }
    const fock::FockSpace& space() const noexcept { return space_; }
    Frame frame() const noexcept { return frame_; }
    Eigen::Index dimension() const noexcept { return static_cast<Eigen::Index>(active_.size()); }
    const std::vector<Eigen::Index>& active() const noexcept { return active_; }

    // Full space <-> active basis. compress() drops entries outside the active basis.
    CMat compress(const CMat& full) const;
    CVec compress(const CVec& full) const;
    CMat expand(const CMat& active) const;
    CVec expand(const CVec& active) const;

    // Reduced state of one mode from an active-basis density matrix or ket.
    CMat reduced(const CMat& rho, int mode) const;
    void accumulate_reduced(const CVec& psi, int mode, CMat& out) const;

    // H_S on the active basis.
    SparseOp system_hamiltonian() const;

    OperatorCoefficients coefficients(double t, const CVec& F) const;

    // out = V + V^dag; `scratch` holds two dim x dim work matrices.
    void master_rhs(const CMat& rho, const OperatorCoefficients& c, CMat& out, std::array<CMat, 2>& scratch) const;
    // out = [-i H + z_conj A - A^dag Obar] psi; `scratch` is a dim vector.
    void trajectory_rhs(const CVec& psi, const OperatorCoefficients& c, cplx z_conj, CVec& out, CVec& scratch) const;

    // Working frame -> lab frame at time t.
    CMat density_to_lab(const CMat& rho, double t) const;
    CVec ket_to_lab(const CVec& psi, double t) const;
    CMat reduced_to_lab(const CMat& reduced, int mode, double t) const;

private:
    fock::SystemSpec spec_;
    fock::FockSpace space_;
    Frame frame_;
    std::vector<Eigen::Index> active_;             // full-space index of each active state
    std::vector<SparseOp> lower_, raise_;          // a_k and a_k^dag on the active basis
    std::vector<SparseOp> hop_;                    // a_i^dag a_{i+1}
    std::vector<SparseOp> hop_adj_;
    Eigen::VectorXd energy_;                       // sum_i Omega_i n_i
    // Per mode: active states grouped by the occupations of the other modes.
    std::vector<std::vector<std::vector<std::pair<Eigen::Index, int>>>> groups_;
};

// exp(-i H_S h) for the closed-system Hamiltonian, built from the connected
// components of H_S (single basis states when there is no hopping).
class FreePropagator {
public:
    FreePropagator(const Generator& gen, double h);

    void apply(CVec& psi) const;
    // x <- U x U^dag.
    void conjugate(CMat& x) const;
    std::size_t largest_block() const noexcept { return largest_; }

private:
    CVec phase_;                                   // diagonal part, used for singletons
    std::vector<std::vector<Eigen::Index>> index_; // multi-state components
    std::vector<CMat> block_;
    std::size_t largest_ = 1;
};

// F at t, t + dt/2 and t + dt.
struct StageF {
    CVec f0, fm, f1;
};
StageF stage_coefficients(const coeff::CoefficientTable& table, double t, double dt);

// One RK4 step (integrating-factor RK4 in the interaction frame); states on the
// generator's active basis.
CMat step_master(const Generator& gen, const CMat& rho, double t, const StageF& F, double dt);
// One RK4 step; z holds the noise at t, t + dt/2, t + dt (not conjugated).
CVec step_trajectory(const Generator& gen, const CVec& psi, double t, const StageF& F,
                     const std::array<cplx, 3>& z, double dt);

struct RunOptions {
    double dt = 0.02;
    double t_max = 10.0;
    std::size_t sample_stride = 10;    // reduced states every this many steps
    std::vector<double> probe_times;   // full states (snapped to the grid)
    Frame frame = Frame::interaction;
    cplx alpha{2.0, 0.0};              // target cat for the fidelity curves
    int theta_grid = 256;
};

struct Monitors {
    double max_trace_drift = 0.0;
    double max_hermiticity = 0.0;
    double min_eigenvalue = 1.0;       // over probe states
    double max_top_population = 0.0;   // occupation of the highest kept Fock level, any mode
    double initial_purity = 0.0;
    double max_purity_change = 0.0;
};

struct HalvingCheck {
    bool performed = false;
    bool passed = true;
    int mode = 1;
    double sup_change = 0.0;
    double tolerance = 5e-3;
    std::vector<double> coarse, fine;  // fidelity of `mode` at the coarse sample times
};

struct MasterOptions : RunOptions {
    bool halving_check = false;
    int check_mode = 1;                // zero-based mode whose fidelity curve is compared
    double halving_tolerance = 5e-3;
    bool monitor_eigenvalues = true;
};

struct MasterRun {
    std::vector<double> sample_times;
    std::vector<std::vector<CMat>> reduced;  // [sample][mode], lab frame
    std::vector<double> probe_times;
    std::vector<CMat> probe_states;          // lab frame
    obs::FidelityCurve fidelity;
    Monitors monitors;
    HalvingCheck halving;
    std::size_t steps = 0;
};

MasterRun run_master(const fock::SystemSpec& spec, const fock::FockSpace& space, const CMat& rho0,
                     const coeff::CoefficientTable& table, const MasterOptions& opts);

// Noise model for trajectories: exact AR(1) for OU kernels, circulant embedding otherwise.
struct NoiseModel {
    std::optional<env::LorentzSpec> ou;
    std::optional<env::EnvKernel> kernel;

    static NoiseModel from_kernel(const env::EnvKernel& k);
    env::NoisePath sample(double dt, std::size_t steps, std::uint64_t seed) const;
};

struct EnsembleOptions : RunOptions {
    std::size_t trajectories = 100;
    std::uint64_t seed = 1;
    int blocks = 10;
    int workers = 1;
    bool record_full = false;   // keep full dyads at probe times
};

struct EnsembleResult {
    std::size_t trajectories = 0;
    std::vector<std::size_t> block_sizes;
    std::vector<double> sample_times;
    std::vector<std::vector<CMat>> reduced;                    // [sample][mode] mean, lab frame
    std::vector<std::vector<std::vector<CMat>>> reduced_blocks;  // [block][sample][mode] block means
    std::vector<double> trace_mean, trace_error;               // per sample
    std::vector<double> probe_times;
    std::vector<CMat> probe_mean;                               // lab frame
    std::vector<std::vector<CMat>> probe_blocks;                // [block][probe]
    obs::FidelityCurve fidelity;
    std::vector<std::vector<double>> fidelity_error;            // [mode][sample], jackknife
    Monitors monitors;
    double max_norm = 0.0;
    std::size_t steps = 0;
};

// Leave-one-block-out means, weighted by block sizes.
std::vector<CMat> leave_one_out(const std::vector<CMat>& block_means, const std::vector<std::size_t>& sizes);
// Block-jackknife standard error of an estimate in trace-distance units.
double jackknife_trace_error(const std::vector<CMat>& block_means, const std::vector<std::size_t>& sizes);

EnsembleResult run_ensemble(const fock::SystemSpec& spec, const fock::FockSpace& space, const CVec& psi0,
                            const coeff::CoefficientTable& table, const NoiseModel& noise,
                            const EnsembleOptions& opts);

// Default initial state: cat(alpha) in `mode`, vacuum elsewhere.
fock::Ket default_initial_state(const fock::FockSpace& space, cplx alpha, int mode = 0);

} // namespace cradle::dyn
