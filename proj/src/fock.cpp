#include "cradle/fock.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace cradle::fock {

FockSpace::FockSpace(int num_modes, int cutoff) : num_modes_(num_modes), cutoff_(cutoff), dimension_(1) {
    if (num_modes < 1) {
        throw std::invalid_argument("FockSpace: need at least one mode");
    }
    if (cutoff < 1) {
        throw std::invalid_argument("FockSpace: cutoff must be positive");
    }
    for (int i = 0; i < num_modes; ++i) {
        if (dimension_ > std::numeric_limits<Eigen::Index>::max() / cutoff) {
            throw std::invalid_argument("FockSpace: dimension overflows the index type");
        }
        dimension_ *= cutoff;
    }
}

void FockSpace::check_mode(int mode) const {
    if (mode < 0 || mode >= num_modes_) {
        throw std::out_of_range("invalid mode index " + std::to_string(mode) + " for " +
                                std::to_string(num_modes_) + " modes");
    }
}

Eigen::Index FockSpace::stride(int mode) const {
    check_mode(mode);
    Eigen::Index s = 1;
    for (int j = mode + 1; j < num_modes_; ++j) {
        s *= cutoff_;
    }
    return s;
}

int FockSpace::occupation(Eigen::Index index, int mode) const {
    return static_cast<int>((index / stride(mode)) % cutoff_);
}

int FockSpace::total_occupation(Eigen::Index index) const {
    int total = 0;
    for (int j = num_modes_ - 1; j >= 0; --j) {
        total += static_cast<int>(index % cutoff_);
        index /= cutoff_;
    }
    return total;
}

void SystemSpec::validate() const {
    const auto n = omegas.size();
    if (n == 0) {
        throw std::invalid_argument("SystemSpec: no cavities");
    }
    if (lambdas.size() != n || weights.size() != n) {
        throw std::invalid_argument("SystemSpec: omegas, lambdas and weights must have equal length");
    }
    if (lambdas.back() != 0.0) {
        throw std::invalid_argument("SystemSpec: open boundary requires the last lambda to be 0");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(omegas[i]) || !std::isfinite(lambdas[i]) || !std::isfinite(weights[i])) {
            throw std::invalid_argument("SystemSpec: non-finite parameter");
        }
    }
}

SystemSpec SystemSpec::uniform(int num_modes, double omega) {
    if (num_modes < 1) {
        throw std::invalid_argument("SystemSpec: need at least one cavity");
    }
    const auto n = static_cast<std::size_t>(num_modes);
    return {std::vector<double>(n, omega), std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)};
}

double asymmetry(const SystemSpec& spec) {
    if (spec.weights.size() < 3) {
        throw std::invalid_argument("asymmetry: needs at least three cavities");
    }
    const double l2 = spec.weights[1];
    const double l3 = spec.weights[2];
    if (l2 + l3 == 0.0) {
        throw std::invalid_argument("asymmetry: l_2 + l_3 vanishes");
    }
    return (l3 - l2) / (l2 + l3);
}

std::vector<double> weights_for_asymmetry(double eta) {
    return {1.0, 1.0 - eta, 1.0 + eta};
}

double DensOp::hermiticity_residual() const {
    return (matrix - matrix.adjoint()).cwiseAbs().maxCoeff();
}

double DensOp::min_eigenvalue() const {
    const CMat herm = 0.5 * (matrix + matrix.adjoint());
    Eigen::SelfAdjointEigenSolver<CMat> solver(herm, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("min_eigenvalue: eigen decomposition failed");
    }
    return solver.eigenvalues()(0);
}

ModeOp mode_annihilator(const FockSpace& space, int mode) {
    space.check_mode(mode);
    const Eigen::Index dim = space.dimension();
    const Eigen::Index s = space.stride(mode);
    std::vector<Eigen::Triplet<cplx>> entries;
    entries.reserve(static_cast<std::size_t>(dim));
    for (Eigen::Index idx = 0; idx < dim; ++idx) {
        const int n = space.occupation(idx, mode);
        if (n > 0) {
            entries.emplace_back(idx - s, idx, std::sqrt(static_cast<double>(n)));
        }
    }
    SparseOp a(dim, dim);
    a.setFromTriplets(entries.begin(), entries.end());
    return {space, std::move(a)};
}

ModeOp mode_creator(const FockSpace& space, int mode) {
    return mode_annihilator(space, mode).adjoint();
}

ModeOp number_operator(const FockSpace& space, int mode) {
    space.check_mode(mode);
    const Eigen::Index dim = space.dimension();
    SparseOp n(dim, dim);
    n.reserve(Eigen::VectorXi::Constant(dim, 1));
    for (Eigen::Index idx = 0; idx < dim; ++idx) {
        n.insert(idx, idx) = static_cast<double>(space.occupation(idx, mode));
    }
    n.makeCompressed();
    return {space, std::move(n)};
}

ModeOp total_number_operator(const FockSpace& space) {
    const Eigen::Index dim = space.dimension();
    SparseOp n(dim, dim);
    n.reserve(Eigen::VectorXi::Constant(dim, 1));
    for (Eigen::Index idx = 0; idx < dim; ++idx) {
        n.insert(idx, idx) = static_cast<double>(space.total_occupation(idx));
    }
    n.makeCompressed();
    return {space, std::move(n)};
}

ModeOp identity_operator(const FockSpace& space) {
    SparseOp id(space.dimension(), space.dimension());
    id.setIdentity();
    return {space, std::move(id)};
}

namespace {

void check_consistent(const SystemSpec& spec, const FockSpace& space) {
    spec.validate();
    if (spec.num_modes() != space.num_modes()) {
        throw std::invalid_argument("dimension mismatch: SystemSpec has " + std::to_string(spec.num_modes()) +
                                    " cavities, FockSpace has " + std::to_string(space.num_modes()) + " modes");
    }
}

} // namespace

ModeOp build_system_hamiltonian(const SystemSpec& spec, const FockSpace& space) {
    check_consistent(spec, space);
    const int n = space.num_modes();
    const Eigen::Index dim = space.dimension();
    std::vector<Eigen::Triplet<cplx>> entries;
    for (Eigen::Index idx = 0; idx < dim; ++idx) {
        double diag = 0.0;
        for (int i = 0; i < n; ++i) {
            diag += spec.omegas[static_cast<std::size_t>(i)] * space.occupation(idx, i);
        }
        entries.emplace_back(idx, idx, diag);
    }
    // a_i^dag a_{i+1} moves one photon from i+1 to i; its adjoint is added with the
    // identical real amplitude so the matrix is exactly symmetric.
    for (int i = 0; i + 1 < n; ++i) {
        const double lam = spec.lambdas[static_cast<std::size_t>(i)];
        if (lam == 0.0) {
            continue;
        }
        const Eigen::Index si = space.stride(i);
        const Eigen::Index sj = space.stride(i + 1);
        for (Eigen::Index idx = 0; idx < dim; ++idx) {
            const int ni = space.occupation(idx, i);
            const int nj = space.occupation(idx, i + 1);
            if (nj == 0 || ni + 1 >= space.cutoff()) {
                continue;
            }
            const Eigen::Index target = idx + si - sj;
            const double amp = lam * std::sqrt(static_cast<double>(nj) * (ni + 1));
            entries.emplace_back(target, idx, amp);
            entries.emplace_back(idx, target, amp);
        }
    }
    SparseOp h(dim, dim);
    h.setFromTriplets(entries.begin(), entries.end());
    return {space, std::move(h)};
}

ModeOp collective_operator(const SystemSpec& spec, const FockSpace& space) {
    check_consistent(spec, space);
    SparseOp a(space.dimension(), space.dimension());
    for (int i = 0; i < space.num_modes(); ++i) {
        const double w = spec.weights[static_cast<std::size_t>(i)];
        if (w != 0.0) {
            a += cplx(w) * mode_annihilator(space, i).matrix;
        }
    }
    a.makeCompressed();
    return {space, std::move(a)};
}

ModeOperators::ModeOperators(const FockSpace& space) : space_(space) {
    for (int i = 0; i < space.num_modes(); ++i) {
        annihilators_.push_back(mode_annihilator(space, i).matrix);
        creators_.push_back(SparseOp(annihilators_.back().adjoint()));
    }
}

Eigen::VectorXd ModeOperators::weighted_number_diagonal(std::span<const double> w) const {
    if (static_cast<int>(w.size()) != space_.num_modes()) {
        throw std::invalid_argument("weighted_number_diagonal: weight count mismatch");
    }
    Eigen::VectorXd d(space_.dimension());
    for (Eigen::Index idx = 0; idx < space_.dimension(); ++idx) {
        double acc = 0.0;
        for (int i = 0; i < space_.num_modes(); ++i) {
            acc += w[static_cast<std::size_t>(i)] * space_.occupation(idx, i);
        }
        d(idx) = acc;
    }
    return d;
}

CutoffCheck check_cutoff(int cutoff, cplx alpha) {
    const double mag = std::abs(alpha);
    const double mean = mag * mag;
    // Sum the Poisson tail directly; 1 - head loses all precision for small tails.
    double term = std::exp(-mean);
    for (int n = 1; n <= cutoff; ++n) {
        term *= mean / n;
    }
    double tail = 0.0;
    for (int n = cutoff; n < cutoff + 2000; ++n) {
        tail += term;
        term *= mean / (n + 1);
        if (term < 1e-18 * tail && n > mean) {
            break;
        }
    }
    const int recommended = static_cast<int>(std::ceil(mean + 6.0 * mag + 4.0));
    return {tail, recommended, cutoff >= recommended};
}

CVec coherent_amplitudes(int cutoff, cplx alpha, double max_tail) {
    if (cutoff < 1) {
        throw std::invalid_argument("coherent_amplitudes: cutoff must be positive");
    }
    const auto check = check_cutoff(cutoff, alpha);
    if (check.tail_mass > max_tail) {
        throw std::invalid_argument("cutoff " + std::to_string(cutoff) + " too small for |alpha| = " +
                                    std::to_string(std::abs(alpha)) + ": truncated tail mass " +
                                    std::to_string(check.tail_mass) + " (recommended cutoff " +
                                    std::to_string(check.recommended) + ")");
    }
    CVec c(cutoff);
    c(0) = std::exp(-0.5 * std::norm(alpha));
    for (int n = 1; n < cutoff; ++n) {
        c(n) = c(n - 1) * alpha / std::sqrt(static_cast<double>(n));
    }
    c.normalize();
    return c;
}

CVec cat_amplitudes(int cutoff, cplx alpha, double theta, double max_tail) {
    const cplx rotated = alpha * std::exp(-kI * theta);
    CVec c = coherent_amplitudes(cutoff, rotated, max_tail) + coherent_amplitudes(cutoff, -rotated, max_tail);
    const double nrm = c.norm();
    if (nrm == 0.0) {
        throw std::invalid_argument("cat_amplitudes: vanishing superposition");
    }
    return c / nrm;
}

double cat_normalization(cplx alpha) {
    return 2.0 * (1.0 + std::exp(-2.0 * std::norm(alpha)));
}

Ket product_state(const FockSpace& space, std::span<const CVec> factors) {
    if (static_cast<int>(factors.size()) != space.num_modes()) {
        throw std::invalid_argument("product_state: need one factor per mode");
    }
    for (const auto& f : factors) {
        if (f.size() != space.cutoff()) {
            throw std::invalid_argument("product_state: factor length differs from cutoff");
        }
    }
    CVec psi(space.dimension());
    for (Eigen::Index idx = 0; idx < space.dimension(); ++idx) {
        cplx amp = 1.0;
        Eigen::Index rest = idx;
        for (int i = space.num_modes() - 1; i >= 0; --i) {
            amp *= factors[static_cast<std::size_t>(i)](rest % space.cutoff());
            rest /= space.cutoff();
        }
        psi(idx) = amp;
    }
    return {space, std::move(psi)};
}

Ket vacuum(const FockSpace& space) {
    CVec psi = CVec::Zero(space.dimension());
    psi(0) = 1.0;
    return {space, std::move(psi)};
}

namespace {

Ket embed_single_mode(const FockSpace& space, int mode, const CVec& amplitudes) {
    space.check_mode(mode);
    std::vector<CVec> factors(static_cast<std::size_t>(space.num_modes()), CVec::Zero(space.cutoff()));
    for (auto& f : factors) {
        f(0) = 1.0;
    }
    factors[static_cast<std::size_t>(mode)] = amplitudes;
    return product_state(space, factors);
}

} // namespace

Ket coherent_state(const FockSpace& space, int mode, cplx alpha, double max_tail) {
    return embed_single_mode(space, mode, coherent_amplitudes(space.cutoff(), alpha, max_tail));
}

Ket cat_state(const FockSpace& space, int mode, cplx alpha, double theta, double max_tail) {
    return embed_single_mode(space, mode, cat_amplitudes(space.cutoff(), alpha, theta, max_tail));
}

DensOp projector(const Ket& ket) {
    return {ket.space, ket.amplitudes * ket.amplitudes.adjoint()};
}

DensOp partial_trace(const DensOp& rho, int keep) {
    const FockSpace& space = rho.space;
    space.check_mode(keep);
    if (rho.matrix.rows() != space.dimension() || rho.matrix.cols() != space.dimension()) {
        throw std::invalid_argument("partial_trace: matrix does not match its space");
    }
    const int nc = space.cutoff();
    const Eigen::Index s = space.stride(keep);
    const Eigen::Index block = s * nc;
    const Eigen::Index outer = space.dimension() / block;
    CMat red = CMat::Zero(nc, nc);
    for (Eigen::Index hi = 0; hi < outer; ++hi) {
        for (Eigen::Index lo = 0; lo < s; ++lo) {
            const Eigen::Index base = hi * block + lo;
            for (int b = 0; b < nc; ++b) {
                for (int a = 0; a < nc; ++a) {
                    red(a, b) += rho.matrix(base + a * s, base + b * s);
                }
            }
        }
    }
    return {FockSpace(1, nc), std::move(red)};
}

void accumulate_reduced_dyad(const FockSpace& space, const CVec& psi, int keep, CMat& out, double weight) {
    space.check_mode(keep);
    const int nc = space.cutoff();
    if (out.rows() != nc || out.cols() != nc) {
        throw std::invalid_argument("accumulate_reduced_dyad: output has wrong shape");
    }
    const Eigen::Index s = space.stride(keep);
    const Eigen::Index block = s * nc;
    const Eigen::Index outer = space.dimension() / block;
    // View psi as a (nc x s) slab per outer index: column lo holds the kept-mode amplitudes.
    for (Eigen::Index hi = 0; hi < outer; ++hi) {
        Eigen::Map<const CMat, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>> slab(
            psi.data() + hi * block, nc, s, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(1, s));
        out.noalias() += weight * (slab * slab.adjoint());
    }
}

CMat reduced_dyad(const FockSpace& space, const CVec& psi, int keep) {
    CMat out = CMat::Zero(space.cutoff(), space.cutoff());
    accumulate_reduced_dyad(space, psi, keep, out);
    return out;
}

cplx expectation(const DensOp& rho, const ModeOp& op) {
    if (!(rho.space == op.space) || rho.matrix.rows() != op.matrix.rows()) {
        throw std::invalid_argument("expectation: dimension mismatch");
    }
    // Tr(rho op) = sum_{ij} rho_ji op_ij
    cplx acc = 0.0;
    for (Eigen::Index i = 0; i < op.matrix.outerSize(); ++i) {
        for (SparseOp::InnerIterator it(op.matrix, i); it; ++it) {
            acc += rho.matrix(it.col(), it.row()) * it.value();
        }
    }
    return acc;
}

cplx expectation(const Ket& psi, const ModeOp& op) {
    if (!(psi.space == op.space) || psi.amplitudes.size() != op.matrix.rows()) {
        throw std::invalid_argument("expectation: dimension mismatch");
    }
    const CVec tmp = op.matrix * psi.amplitudes;
    return psi.amplitudes.dot(tmp);
}

} // namespace cradle::fock
