// fock.hpp - truncated multi-mode Fock space: operators, states, reductions.
//
// Basis ordering: a basis index is the mixed-radix number (n_0 n_1 ... n_{N-1})
// in base N_c with mode 0 as the most significant (slowest-varying) digit.
// Mode indices in the C++ API are zero-based; configuration files and the CLI
// use one-based cavity numbers.

#pragma once

#include "cradle/types.hpp"

#include <span>
#include <vector>

namespace cradle::fock {

class FockSpace {
public:
    FockSpace(int num_modes, int cutoff);

    int num_modes() const noexcept { return num_modes_; }
    // Per-mode dimension; the largest photon number kept is cutoff() - 1.
    int cutoff() const noexcept { return cutoff_; }
    Eigen::Index dimension() const noexcept { return dimension_; }

    Eigen::Index stride(int mode) const;
    int occupation(Eigen::Index index, int mode) const;
    int total_occupation(Eigen::Index index) const;

    void check_mode(int mode) const;

    bool operator==(const FockSpace&) const = default;

private:
    int num_modes_;
    int cutoff_;
    Eigen::Index dimension_;
};

struct SystemSpec {
    std::vector<double> omegas;   // cavity frequencies
    std::vector<double> lambdas;  // lambdas[i] couples cavity i and i+1; last entry is 0
    std::vector<double> weights;  // environment weights l_i

    int num_modes() const noexcept { return static_cast<int>(omegas.size()); }

    // Validates lengths and the open boundary; throws std::invalid_argument.
    void validate() const;

    // N identical cavities at frequency omega, no hopping, unit weights.
    static SystemSpec uniform(int num_modes, double omega = 1.0);
};

// (l_3 - l_2) / (l_2 + l_3) for three or more cavities (zero-based weights[1], weights[2]).
double asymmetry(const SystemSpec& spec);
// Weights (1, 1 - eta, 1 + eta) so that asymmetry() returns eta.
std::vector<double> weights_for_asymmetry(double eta);

struct Ket {
    FockSpace space;
    CVec amplitudes;

    double norm() const { return amplitudes.norm(); }
};

struct DensOp {
    FockSpace space;
    CMat matrix;

    cplx trace() const { return matrix.trace(); }
    double hermiticity_residual() const;
    double min_eigenvalue() const;
};

struct ModeOp {
    FockSpace space;
    SparseOp matrix;

    ModeOp adjoint() const { return {space, SparseOp(matrix.adjoint())}; }
};

ModeOp mode_annihilator(const FockSpace& space, int mode);
ModeOp mode_creator(const FockSpace& space, int mode);
ModeOp number_operator(const FockSpace& space, int mode);
ModeOp total_number_operator(const FockSpace& space);
ModeOp identity_operator(const FockSpace& space);

// H_S = sum_i Omega_i a_i^dag a_i + sum_i lambda_i (a_i^dag a_{i+1} + a_i a_{i+1}^dag).
ModeOp build_system_hamiltonian(const SystemSpec& spec, const FockSpace& space);
// A = sum_i l_i a_i.
ModeOp collective_operator(const SystemSpec& spec, const FockSpace& space);

// Cached single-mode embeddings for one space, built once and shared read-only.
class ModeOperators {
public:
    explicit ModeOperators(const FockSpace& space);

    const FockSpace& space() const noexcept { return space_; }
    const SparseOp& a(int mode) const { return annihilators_.at(static_cast<std::size_t>(mode)); }
    const SparseOp& a_dag(int mode) const { return creators_.at(static_cast<std::size_t>(mode)); }
    // Diagonal of sum_i w_i n_i over the basis.
    Eigen::VectorXd weighted_number_diagonal(std::span<const double> w) const;

private:
    FockSpace space_;
    std::vector<SparseOp> annihilators_;
    std::vector<SparseOp> creators_;
};

// Coherent-state truncation diagnostics for a single mode.
struct CutoffCheck {
    double tail_mass;      // Poisson weight on photon numbers >= cutoff
    int recommended;       // ceil(|alpha|^2 + 6|alpha| + 4)
    bool meets_rule;       // cutoff >= recommended
};

CutoffCheck check_cutoff(int cutoff, cplx alpha);

// Tail mass above which state preparation refuses to truncate.
inline constexpr double kMaxTailMass = 1e-2;

// Single-mode truncated coherent amplitudes, renormalized to unit norm.
CVec coherent_amplitudes(int cutoff, cplx alpha, double max_tail = kMaxTailMass);
// Single-mode (|alpha e^{-i theta}> + |-alpha e^{-i theta}>)/sqrt(norm), unit norm.
CVec cat_amplitudes(int cutoff, cplx alpha, double theta = 0.0, double max_tail = kMaxTailMass);
// 2 (1 + exp(-2|alpha|^2)), the untruncated cat normalization.
double cat_normalization(cplx alpha);

Ket product_state(const FockSpace& space, std::span<const CVec> factors);
Ket vacuum(const FockSpace& space);
Ket coherent_state(const FockSpace& space, int mode, cplx alpha, double max_tail = kMaxTailMass);
Ket cat_state(const FockSpace& space, int mode, cplx alpha, double theta = 0.0,
              double max_tail = kMaxTailMass);

DensOp projector(const Ket& ket);

// Reduced single-mode state of `keep`; the result lives in FockSpace(1, cutoff).
DensOp partial_trace(const DensOp& rho, int keep);
// Reduced state of |psi><psi| without forming the full dyad.
CMat reduced_dyad(const FockSpace& space, const CVec& psi, int keep);
// Accumulate the reduced dyad into `out` (cutoff x cutoff), scaled by `weight`.
void accumulate_reduced_dyad(const FockSpace& space, const CVec& psi, int keep, CMat& out,
                             double weight = 1.0);

cplx expectation(const DensOp& rho, const ModeOp& op);
cplx expectation(const Ket& psi, const ModeOp& op);

} // namespace cradle::fock
