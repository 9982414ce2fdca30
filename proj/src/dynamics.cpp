#include "cradle/dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <memory>
#include <thread>

namespace cradle::dyn {

const char* to_string(Frame f) {
    switch (f) {
    case Frame::interaction: return "interaction";
    case Frame::rotating: return "rotating";
    default: return "lab";
    }
}

Frame frame_from_string(const std::string& s) {
    if (s == "interaction") return Frame::interaction;
    if (s == "rotating") return Frame::rotating;
    if (s == "lab") return Frame::lab;
    throw std::invalid_argument("unknown frame '" + s + "' (expected interaction, rotating or lab)");
}

int max_excitation(const fock::FockSpace& space, const CMat& rho) {
    if (rho.rows() != space.dimension() || rho.cols() != space.dimension())
        throw std::invalid_argument("density matrix has the wrong dimension");
    int n = 0;
    for (Eigen::Index j = 0; j < rho.cols(); ++j)
        for (Eigen::Index i = 0; i < rho.rows(); ++i)
            if (rho(i, j) != cplx(0.0))
                n = std::max({n, space.total_occupation(i), space.total_occupation(j)});
    return n;
}

int max_excitation(const fock::FockSpace& space, const CVec& psi) {
    if (psi.size() != space.dimension()) throw std::invalid_argument("ket has the wrong dimension");
    int n = 0;
    for (Eigen::Index i = 0; i < psi.size(); ++i)
        if (psi(i) != cplx(0.0)) n = std::max(n, space.total_occupation(i));
    return n;
}

Generator::Generator(const fock::SystemSpec& spec, const fock::FockSpace& space, Frame frame, int max_total)
    : spec_(spec), space_(space), frame_(frame) {
    spec_.validate();
    if (spec_.num_modes() != space_.num_modes())
        throw std::invalid_argument("system spec and Fock space disagree on the number of cavities");
    const Eigen::Index full = space_.dimension();
    const int n_modes = space_.num_modes();
    std::vector<Eigen::Index> position(static_cast<std::size_t>(full), -1);
    for (Eigen::Index i = 0; i < full; ++i)
        if (max_total < 0 || space_.total_occupation(i) <= max_total) {
            position[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(active_.size());
            active_.push_back(i);
        }
    const Eigen::Index dim = dimension();

    energy_ = Eigen::VectorXd::Zero(dim);
    groups_.resize(static_cast<std::size_t>(n_modes));
    for (int k = 0; k < n_modes; ++k) {
        const Eigen::Index stride = space_.stride(k);
        std::vector<Eigen::Triplet<cplx>> trip;
        std::vector<Eigen::Index> group_of(static_cast<std::size_t>(full), -1);
        auto& groups = groups_[static_cast<std::size_t>(k)];
        for (Eigen::Index p = 0; p < dim; ++p) {
            const Eigen::Index i = active_[static_cast<std::size_t>(p)];
            const int n = space_.occupation(i, k);
            energy_(p) += spec_.omegas[static_cast<std::size_t>(k)] * n;
            // Lowering keeps the state active: the total only drops.
            if (n > 0) trip.emplace_back(position[static_cast<std::size_t>(i - stride)], p, std::sqrt(static_cast<double>(n)));
            const auto rest = static_cast<std::size_t>(i - n * stride);
            if (group_of[rest] < 0) {
                group_of[rest] = static_cast<Eigen::Index>(groups.size());
                groups.emplace_back();
            }
            groups[static_cast<std::size_t>(group_of[rest])].emplace_back(p, n);
        }
        SparseOp a(dim, dim);
        a.setFromTriplets(trip.begin(), trip.end());
        raise_.emplace_back(a.adjoint());
        lower_.push_back(std::move(a));
    }
    for (int i = 0; i + 1 < n_modes; ++i) {
        SparseOp h = raise_[static_cast<std::size_t>(i)] * lower_[static_cast<std::size_t>(i + 1)];
        h.prune(cplx(0.0));
        hop_adj_.emplace_back(h.adjoint());
        hop_.push_back(std::move(h));
    }
}

CMat Generator::compress(const CMat& full) const {
    if (full.rows() != space_.dimension() || full.cols() != space_.dimension())
        throw std::invalid_argument("density matrix has the wrong dimension");
    return full(active_, active_);
}

CVec Generator::compress(const CVec& full) const {
    if (full.size() != space_.dimension()) throw std::invalid_argument("ket has the wrong dimension");
    return full(active_);
}

CMat Generator::expand(const CMat& active) const {
    CMat full = CMat::Zero(space_.dimension(), space_.dimension());
    full(active_, active_) = active;
    return full;
}

CVec Generator::expand(const CVec& active) const {
    CVec full = CVec::Zero(space_.dimension());
    full(active_) = active;
    return full;
}

CMat Generator::reduced(const CMat& rho, int mode) const {
    space_.check_mode(mode);
    const int nc = space_.cutoff();
    CMat out = CMat::Zero(nc, nc);
    for (const auto& g : groups_[static_cast<std::size_t>(mode)])
        for (const auto& [q, m] : g)
            for (const auto& [p, n] : g) out(n, m) += rho(p, q);
    return out;
}

void Generator::accumulate_reduced(const CVec& psi, int mode, CMat& out) const {
    space_.check_mode(mode);
    for (const auto& g : groups_[static_cast<std::size_t>(mode)])
        for (const auto& [q, m] : g) {
            const cplx cq = std::conj(psi(q));
            for (const auto& [p, n] : g) out(n, m) += psi(p) * cq;
        }
}

SparseOp Generator::system_hamiltonian() const {
    SparseOp h(dimension(), dimension());
    for (std::size_t k = 0; k < lower_.size(); ++k) h += spec_.omegas[k] * SparseOp(raise_[k] * lower_[k]);
    for (std::size_t i = 0; i < hop_.size(); ++i) h += spec_.lambdas[i] * SparseOp(hop_[i] + hop_adj_[i]);
    h.prune(cplx(0.0));
    return h;
}

OperatorCoefficients Generator::coefficients(double t, const CVec& F) const {
    const int n = spec_.num_modes();
    if (F.size() != n) throw std::invalid_argument("coefficient vector has the wrong number of cavities");
    OperatorCoefficients c;
    c.alpha.resize(static_cast<std::size_t>(n));
    c.phi.resize(static_cast<std::size_t>(n));
    c.hop.resize(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
    const bool rot = frame_ == Frame::rotating;
    const bool free = frame_ == Frame::interaction;
    for (int k = 0; k < n; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const cplx ph = rot ? std::exp(cplx(0.0, -spec_.omegas[uk] * t)) : cplx(1.0);
        c.alpha[uk] = spec_.weights[uk] * ph;
        c.phi[uk] = F(k) * ph;
        if (k + 1 < n) {
            const double dw = spec_.omegas[uk] - spec_.omegas[uk + 1];
            c.hop[uk] = free ? cplx(0.0) : spec_.lambdas[uk] * (rot ? std::exp(cplx(0.0, dw * t)) : cplx(1.0));
        }
    }
    return c;
}

void Generator::master_rhs(const CMat& rho, const OperatorCoefficients& c, CMat& out,
                           std::array<CMat, 2>& scratch) const {
    const Eigen::Index dim = dimension();
    if (rho.rows() != dim || rho.cols() != dim) throw std::invalid_argument("density matrix has the wrong dimension");
    CMat& T = scratch[0];
    CMat& V = scratch[1];
    // T = Obar rho
    T.setZero(dim, dim);
    for (std::size_t k = 0; k < lower_.size(); ++k)
        if (c.phi[k] != cplx(0.0)) T.noalias() += c.phi[k] * (lower_[k] * rho);
    // V = -i H rho - A^dag T + T A^dag
    if (frame_ == Frame::lab)
        V.noalias() = (-kI * energy_.cast<cplx>()).asDiagonal() * rho;
    else
        V.setZero(dim, dim);
    for (std::size_t i = 0; i < hop_.size(); ++i) {
        if (c.hop[i] == cplx(0.0)) continue;
        V.noalias() += (-kI * c.hop[i]) * (hop_[i] * rho);
        V.noalias() += (-kI * std::conj(c.hop[i])) * (hop_adj_[i] * rho);
    }
    for (std::size_t k = 0; k < raise_.size(); ++k) {
        const cplx a = std::conj(c.alpha[k]);
        if (a == cplx(0.0)) continue;
        V.noalias() -= a * (raise_[k] * T);
        V.noalias() += a * (T * raise_[k]);
    }
    // out = V + V^dag in tiles.
    constexpr Eigen::Index tile = 32;
    out.resize(dim, dim);
    for (Eigen::Index cb = 0; cb < dim; cb += tile)
        for (Eigen::Index rb = 0; rb < dim; rb += tile) {
            const Eigen::Index nc = std::min(tile, dim - cb), nr = std::min(tile, dim - rb);
            out.block(rb, cb, nr, nc).noalias() = V.block(rb, cb, nr, nc) + V.block(cb, rb, nc, nr).adjoint();
        }
}

void Generator::trajectory_rhs(const CVec& psi, const OperatorCoefficients& c, cplx z_conj, CVec& out,
                               CVec& scratch) const {
    const Eigen::Index dim = dimension();
    if (frame_ == Frame::lab)
        out = (-kI * energy_.cast<cplx>()).cwiseProduct(psi);
    else
        out.setZero(dim);
    for (std::size_t i = 0; i < hop_.size(); ++i) {
        if (c.hop[i] == cplx(0.0)) continue;
        out.noalias() += (-kI * c.hop[i]) * (hop_[i] * psi);
        out.noalias() += (-kI * std::conj(c.hop[i])) * (hop_adj_[i] * psi);
    }
    scratch.setZero(dim);
    for (std::size_t k = 0; k < lower_.size(); ++k) {
        out.noalias() += (z_conj * c.alpha[k]) * (lower_[k] * psi);
        scratch.noalias() += c.phi[k] * (lower_[k] * psi);
    }
    for (std::size_t k = 0; k < raise_.size(); ++k) out.noalias() -= std::conj(c.alpha[k]) * (raise_[k] * scratch);
}

CMat Generator::density_to_lab(const CMat& rho, double t) const {
    if (frame_ != Frame::rotating) return rho;
    const CVec ph = (-kI * t * energy_.cast<cplx>()).array().exp();
    return ph.asDiagonal() * rho * ph.conjugate().asDiagonal();
}

CVec Generator::ket_to_lab(const CVec& psi, double t) const {
    if (frame_ != Frame::rotating) return psi;
    return (-kI * t * energy_.cast<cplx>()).array().exp().matrix().cwiseProduct(psi);
}

CMat Generator::reduced_to_lab(const CMat& reduced, int mode, double t) const {
    if (frame_ != Frame::rotating) return reduced;
    const double w = spec_.omegas.at(static_cast<std::size_t>(mode));
    CMat out = reduced;
    for (Eigen::Index b = 0; b < out.cols(); ++b)
        for (Eigen::Index a = 0; a < out.rows(); ++a)
            out(a, b) *= std::exp(cplx(0.0, -w * static_cast<double>(a - b) * t));
    return out;
}

FreePropagator::FreePropagator(const Generator& gen, double h) {
    const SparseOp H = gen.system_hamiltonian();
    const Eigen::Index dim = gen.dimension();
    // Union-find over the nonzero couplings of H.
    std::vector<Eigen::Index> parent(static_cast<std::size_t>(dim));
    for (Eigen::Index i = 0; i < dim; ++i) parent[static_cast<std::size_t>(i)] = i;
    const auto root = [&](Eigen::Index i) {
        while (parent[static_cast<std::size_t>(i)] != i)
            i = parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
        return i;
    };
    phase_.resize(dim);
    for (Eigen::Index outer = 0; outer < H.outerSize(); ++outer)
        for (SparseOp::InnerIterator it(H, outer); it; ++it) {
            if (it.row() == it.col() || it.value() == cplx(0.0)) continue;
            const Eigen::Index a = root(it.row()), b = root(it.col());
            if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
        }
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(dim));
    for (Eigen::Index i = 0; i < dim; ++i) members[static_cast<std::size_t>(root(i))].push_back(i);

    const CVec diag = H.diagonal();
    for (Eigen::Index i = 0; i < dim; ++i) phase_(i) = std::exp(cplx(0.0, -h * diag(i).real()));
    for (auto& m : members) {
        if (m.size() < 2) continue;
        const auto size = static_cast<Eigen::Index>(m.size());
        CMat hb(size, size);
        for (Eigen::Index a = 0; a < size; ++a)
            for (Eigen::Index b = 0; b < size; ++b) hb(a, b) = H.coeff(m[static_cast<std::size_t>(a)], m[static_cast<std::size_t>(b)]);
        const Eigen::SelfAdjointEigenSolver<CMat> eig(hb);
        if (eig.info() != Eigen::Success) throw NumericalError("free propagator: eigen decomposition failed");
        const CVec ph = (cplx(0.0, -h) * eig.eigenvalues().cast<cplx>()).array().exp();
        block_.push_back(eig.eigenvectors() * ph.asDiagonal() * eig.eigenvectors().adjoint());
        largest_ = std::max(largest_, m.size());
        index_.push_back(std::move(m));
    }
    // Multi-state components are applied as blocks; blank their diagonal phases.
    for (const auto& m : index_)
        for (auto i : m) phase_(i) = 1.0;
}

void FreePropagator::apply(CVec& psi) const {
    psi.array() *= phase_.array();
    for (std::size_t b = 0; b < index_.size(); ++b) {
        const CVec part = block_[b] * psi(index_[b]);
        psi(index_[b]) = part;
    }
}

void FreePropagator::conjugate(CMat& x) const {
    x = phase_.asDiagonal() * x * phase_.conjugate().asDiagonal();
    for (std::size_t b = 0; b < index_.size(); ++b) {
        const CMat rows = block_[b] * x(index_[b], Eigen::all);
        x(index_[b], Eigen::all) = rows;
    }
    for (std::size_t b = 0; b < index_.size(); ++b) {
        const CMat cols = x(Eigen::all, index_[b]) * block_[b].adjoint();
        x(Eigen::all, index_[b]) = cols;
    }
}

StageF stage_coefficients(const coeff::CoefficientTable& table, double t, double dt) {
    return {table.at(t), table.at(t + 0.5 * dt), table.at(t + dt)};
}

namespace {

std::shared_ptr<const FreePropagator> half_step_propagator(const Generator& gen, double dt) {
    if (gen.frame() != Frame::interaction) return nullptr;
    return std::make_shared<const FreePropagator>(gen, 0.5 * dt);
}

// RK4 with persistent buffers. With a propagator U = exp(-i H_S dt/2) this is the
// integrating-factor (Lawson) form:
//   k1 = D(rho), rho~ = U rho U^dag, k~1 = U k1 U^dag,
//   k2 = D(rho~ + h/2 k~1), k3 = D(rho~ + h/2 k2), k4 = D(U (rho~ + h k3) U^dag),
//   rho' = U (rho~ + h/6 k~1 + h/3 (k2 + k3)) U^dag + h/6 k4.
class MasterStepper {
public:
    MasterStepper(const Generator& gen, double dt) : gen_(gen), prop_(half_step_propagator(gen, dt)), dt_(dt) {
        const Eigen::Index d = gen.dimension();
        acc_.resize(d, d);
        stage_.resize(d, d);
        k_.resize(d, d);
    }

    void step(CMat& rho, double t, const StageF& F, double dt) {
        if (dt != dt_) throw std::logic_error("master stepper used with a different dt");
        const auto c0 = gen_.coefficients(t, F.f0);
        const auto cm = gen_.coefficients(t + 0.5 * dt, F.fm);
        const auto c1 = gen_.coefficients(t + dt, F.f1);
        if (prop_) return lawson(rho, c0, cm, c1, dt);
        gen_.master_rhs(rho, c0, k_, scratch_);
        update(rho, 0.0, 1.0, 0.5 * dt);
        gen_.master_rhs(stage_, cm, k_, scratch_);
        update(rho, 1.0, 2.0, 0.5 * dt);
        gen_.master_rhs(stage_, cm, k_, scratch_);
        update(rho, 1.0, 2.0, dt);
        gen_.master_rhs(stage_, c1, k_, scratch_);
        const double w = dt / 6.0;
        for (Eigen::Index c = 0; c < rho.cols(); ++c) rho.col(c) += w * (acc_.col(c) + k_.col(c));
    }

private:
    void lawson(CMat& rho, const OperatorCoefficients& c0, const OperatorCoefficients& cm,
                const OperatorCoefficients& c1, double dt) {
        gen_.master_rhs(rho, c0, k_, scratch_);
        prop_->conjugate(rho);
        prop_->conjugate(k_);
        acc_ = k_;
        stage_ = rho + (0.5 * dt) * k_;
        gen_.master_rhs(stage_, cm, k_, scratch_);
        acc_ += 2.0 * k_;
        stage_ = rho + (0.5 * dt) * k_;
        gen_.master_rhs(stage_, cm, k_, scratch_);
        acc_ += 2.0 * k_;
        stage_ = rho + dt * k_;
        prop_->conjugate(stage_);
        gen_.master_rhs(stage_, c1, k_, scratch_);
        rho += (dt / 6.0) * acc_;
        prop_->conjugate(rho);
        rho += (dt / 6.0) * k_;
    }

    // acc = keep * acc + weight * k and stage = rho + h * k, one column at a time.
    void update(const CMat& rho, double keep, double weight, double h) {
        for (Eigen::Index c = 0; c < rho.cols(); ++c) {
            auto k = k_.col(c);
            if (keep == 0.0)
                acc_.col(c) = weight * k;
            else
                acc_.col(c) += weight * k;
            stage_.col(c) = rho.col(c) + h * k;
        }
    }

    const Generator& gen_;
    std::shared_ptr<const FreePropagator> prop_;
    double dt_;
    CMat acc_, stage_, k_;
    std::array<CMat, 2> scratch_;
};

class TrajectoryStepper {
public:
    TrajectoryStepper(const Generator& gen, std::shared_ptr<const FreePropagator> prop)
        : gen_(gen), prop_(std::move(prop)) {
        const Eigen::Index d = gen.dimension();
        acc_.resize(d);
        stage_.resize(d);
        k_.resize(d);
        scratch_.resize(d);
    }

    void step(CVec& psi, const OperatorCoefficients& c0, const OperatorCoefficients& cm,
              const OperatorCoefficients& c1, const std::array<cplx, 3>& z, double dt) {
        if (prop_) {
            gen_.trajectory_rhs(psi, c0, std::conj(z[0]), k_, scratch_);
            prop_->apply(psi);
            prop_->apply(k_);
            acc_ = k_;
            stage_ = psi + (0.5 * dt) * k_;
            gen_.trajectory_rhs(stage_, cm, std::conj(z[1]), k_, scratch_);
            acc_ += 2.0 * k_;
            stage_ = psi + (0.5 * dt) * k_;
            gen_.trajectory_rhs(stage_, cm, std::conj(z[1]), k_, scratch_);
            acc_ += 2.0 * k_;
            stage_ = psi + dt * k_;
            prop_->apply(stage_);
            gen_.trajectory_rhs(stage_, c1, std::conj(z[2]), k_, scratch_);
            psi += (dt / 6.0) * acc_;
            prop_->apply(psi);
            psi += (dt / 6.0) * k_;
            return;
        }
        gen_.trajectory_rhs(psi, c0, std::conj(z[0]), k_, scratch_);
        acc_ = k_;
        stage_ = psi + (0.5 * dt) * k_;
        gen_.trajectory_rhs(stage_, cm, std::conj(z[1]), k_, scratch_);
        acc_ += 2.0 * k_;
        stage_ = psi + (0.5 * dt) * k_;
        gen_.trajectory_rhs(stage_, cm, std::conj(z[1]), k_, scratch_);
        acc_ += 2.0 * k_;
        stage_ = psi + dt * k_;
        gen_.trajectory_rhs(stage_, c1, std::conj(z[2]), k_, scratch_);
        acc_ += k_;
        psi += (dt / 6.0) * acc_;
    }

private:
    const Generator& gen_;
    std::shared_ptr<const FreePropagator> prop_;
    CVec acc_, stage_, k_, scratch_;
};

std::size_t checked_steps(const RunOptions& o) {
    if (!(o.dt > 0.0) || !std::isfinite(o.dt)) throw std::invalid_argument("dt must be positive");
    if (!(o.t_max >= 0.0) || !std::isfinite(o.t_max)) throw std::invalid_argument("t_max must be nonnegative");
    if (o.sample_stride == 0) throw std::invalid_argument("sample stride must be positive");
    return static_cast<std::size_t>(std::llround(o.t_max / o.dt));
}

std::vector<std::size_t> sample_steps(std::size_t steps, std::size_t stride) {
    std::vector<std::size_t> s;
    for (std::size_t k = 0; k <= steps; k += stride) s.push_back(k);
    if (s.back() != steps) s.push_back(steps);
    return s;
}

std::vector<std::size_t> probe_steps(const std::vector<double>& times, double dt, std::size_t steps) {
    std::vector<std::size_t> p;
    for (double t : times) {
        if (t < -1e-12) throw std::invalid_argument("probe times must be nonnegative");
        const auto k = static_cast<std::size_t>(std::llround(t / dt));
        if (k > steps) throw std::invalid_argument("probe time " + std::to_string(t) + " beyond t_max");
        p.push_back(k);
    }
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    return p;
}

double top_population(const Generator& gen, const CMat& rho) {
    const auto& space = gen.space();
    const auto& active = gen.active();
    double worst = 0.0;
    const int top = space.cutoff() - 1;
    for (int k = 0; k < space.num_modes(); ++k) {
        double p = 0.0;
        for (std::size_t i = 0; i < active.size(); ++i)
            if (space.occupation(active[i], k) == top) p += rho(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)).real();
        worst = std::max(worst, p);
    }
    return worst;
}

// Hermiticity and spectrum from the active block; the inactive rest of the full
// matrix is exactly zero and contributes zero eigenvalues.
void update_state_monitors(const Generator& gen, const CMat& active, Monitors& mon, bool eigenvalues) {
    const fock::DensOp block{gen.space(), active};
    mon.max_hermiticity = std::max(mon.max_hermiticity, block.hermiticity_residual());
    if (!eigenvalues) return;
    double lowest = block.min_eigenvalue();
    if (gen.dimension() < gen.space().dimension()) lowest = std::min(lowest, 0.0);
    mon.min_eigenvalue = std::min(mon.min_eigenvalue, lowest);
}

void check_finite(const CMat& m, std::size_t step, const char* what) {
    if (!m.allFinite()) throw NumericalError(std::string(what) + " produced non-finite entries", static_cast<long>(step));
}

obs::FidelityCurve fidelity_curve(const std::vector<double>& times, const std::vector<std::vector<CMat>>& reduced,
                                  int modes, cplx alpha, int grid) {
    obs::FidelityCurve c;
    c.t = times;
    c.fidelity.assign(static_cast<std::size_t>(modes), std::vector<double>(times.size()));
    c.theta.assign(static_cast<std::size_t>(modes), std::vector<double>(times.size()));
    for (std::size_t s = 0; s < times.size(); ++s)
        for (int m = 0; m < modes; ++m) {
            const auto r = obs::transfer_fidelity(reduced[s][static_cast<std::size_t>(m)], alpha, grid);
            c.fidelity[static_cast<std::size_t>(m)][s] = r.fidelity;
            c.theta[static_cast<std::size_t>(m)][s] = r.theta;
        }
    return c;
}

} // namespace

CMat step_master(const Generator& gen, const CMat& rho, double t, const StageF& F, double dt) {
    const Eigen::Index dim = gen.dimension();
    if (rho.rows() != dim || rho.cols() != dim) throw std::invalid_argument("density matrix has the wrong dimension");
    MasterStepper stepper(gen, dt);
    CMat out = rho;
    stepper.step(out, t, F, dt);
    check_finite(out, 0, "master step");
    return out;
}

CVec step_trajectory(const Generator& gen, const CVec& psi, double t, const StageF& F,
                     const std::array<cplx, 3>& z, double dt) {
    if (psi.size() != gen.dimension()) throw std::invalid_argument("ket has the wrong dimension");
    TrajectoryStepper stepper(gen, half_step_propagator(gen, dt));
    CVec out = psi;
    stepper.step(out, gen.coefficients(t, F.f0), gen.coefficients(t + 0.5 * dt, F.fm),
                 gen.coefficients(t + dt, F.f1), z, dt);
    if (!out.allFinite()) throw NumericalError("trajectory step produced non-finite amplitudes");
    return out;
}

MasterRun run_master(const fock::SystemSpec& spec, const fock::FockSpace& space, const CMat& rho0,
                     const coeff::CoefficientTable& table, const MasterOptions& opts) {
    const std::size_t steps = checked_steps(opts);
    if (rho0.rows() != space.dimension() || rho0.cols() != space.dimension())
        throw std::invalid_argument("initial state has the wrong dimension");
    const Generator gen(spec, space, opts.frame, max_excitation(space, rho0));
    if (table.num_modes() != spec.num_modes()) throw std::invalid_argument("coefficient table has the wrong mode count");
    if (table.t_max() < opts.t_max * (1.0 - 1e-12))
        throw std::invalid_argument("coefficient table ends before t_max");

    const auto samples = sample_steps(steps, opts.sample_stride);
    const auto probes = probe_steps(opts.probe_times, opts.dt, steps);
    const int modes = spec.num_modes();

    MasterRun run;
    run.steps = steps;
    const double trace0 = rho0.trace().real();
    run.monitors.initial_purity = obs::purity(rho0);

    MasterStepper stepper(gen, opts.dt);
    CMat rho = gen.compress(rho0);
    std::size_t next_sample = 0, next_probe = 0;
    for (std::size_t n = 0;; ++n) {
        const double t = opts.dt * static_cast<double>(n);
        const bool is_sample = next_sample < samples.size() && samples[next_sample] == n;
        const bool is_probe = next_probe < probes.size() && probes[next_probe] == n;
        if (is_sample || is_probe) {
            check_finite(rho, n, "master step");
            auto& mon = run.monitors;
            mon.max_trace_drift = std::max(mon.max_trace_drift, std::abs(rho.trace().real() - trace0));
            mon.max_top_population = std::max(mon.max_top_population, top_population(gen, rho));
            mon.max_purity_change = std::max(mon.max_purity_change, std::abs(obs::purity(rho) - mon.initial_purity));
        }
        if (is_sample) {
            std::vector<CMat> red;
            for (int m = 0; m < modes; ++m) red.push_back(gen.reduced_to_lab(gen.reduced(rho, m), m, t));
            run.sample_times.push_back(t);
            run.reduced.push_back(std::move(red));
            ++next_sample;
        }
        if (is_probe) {
            const CMat lab = gen.density_to_lab(rho, t);
            update_state_monitors(gen, lab, run.monitors, opts.monitor_eigenvalues);
            run.probe_times.push_back(t);
            run.probe_states.push_back(gen.expand(lab));
            ++next_probe;
        }
        if (n == steps) break;
        stepper.step(rho, t, stage_coefficients(table, t, opts.dt), opts.dt);
    }
    run.fidelity = fidelity_curve(run.sample_times, run.reduced, modes, opts.alpha, opts.theta_grid);

    if (opts.halving_check) {
        MasterOptions fine = opts;
        fine.dt = 0.5 * opts.dt;
        fine.sample_stride = 2 * opts.sample_stride;
        fine.probe_times.clear();
        fine.halving_check = false;
        fine.monitor_eigenvalues = false;
        // Align the fine samples with the coarse ones, including a ragged final sample.
        const auto fine_run = run_master(spec, space, rho0, table, fine);
        auto& h = run.halving;
        h.performed = true;
        h.mode = opts.check_mode;
        h.tolerance = opts.halving_tolerance;
        const auto m = static_cast<std::size_t>(opts.check_mode);
        h.coarse = run.fidelity.fidelity.at(m);
        h.fine = fine_run.fidelity.fidelity.at(m);
        const std::size_t common = std::min(h.coarse.size(), h.fine.size());
        for (std::size_t k = 0; k < common; ++k) h.sup_change = std::max(h.sup_change, std::abs(h.coarse[k] - h.fine[k]));
        h.passed = h.sup_change < h.tolerance;
    }
    return run;
}

NoiseModel NoiseModel::from_kernel(const env::EnvKernel& k) {
    NoiseModel m;
    switch (k.kind()) {
    case env::KernelKind::ou: m.ou = k.lorentz(); break;
    case env::KernelKind::markovian_delta:
        throw ConfigError("delta-correlated noise cannot drive trajectories; use the master solver");
    default: m.kernel = k; break;
    }
    return m;
}

env::NoisePath NoiseModel::sample(double dt, std::size_t steps, std::uint64_t seed) const {
    if (ou) return env::sample_ou_noise(*ou, dt, steps, seed);
    if (kernel) return env::sample_noise_from_kernel(*kernel, dt, steps, seed);
    throw std::logic_error("empty noise model");
}

std::vector<CMat> leave_one_out(const std::vector<CMat>& block_means, const std::vector<std::size_t>& sizes) {
    if (block_means.size() != sizes.size() || block_means.size() < 2)
        throw std::invalid_argument("leave-one-out needs at least two blocks with sizes");
    std::size_t total = 0;
    CMat sum = CMat::Zero(block_means[0].rows(), block_means[0].cols());
    for (std::size_t b = 0; b < sizes.size(); ++b) {
        sum += static_cast<double>(sizes[b]) * block_means[b];
        total += sizes[b];
    }
    std::vector<CMat> out;
    out.reserve(sizes.size());
    for (std::size_t b = 0; b < sizes.size(); ++b)
        out.push_back((sum - static_cast<double>(sizes[b]) * block_means[b]) / static_cast<double>(total - sizes[b]));
    return out;
}

double jackknife_trace_error(const std::vector<CMat>& block_means, const std::vector<std::size_t>& sizes) {
    const auto loo = leave_one_out(block_means, sizes);
    CMat mean = CMat::Zero(loo[0].rows(), loo[0].cols());
    for (const auto& m : loo) mean += m;
    mean /= static_cast<double>(loo.size());
    double s2 = 0.0;
    for (const auto& m : loo) {
        const double d = obs::trace_distance(m, mean);
        s2 += d * d;
    }
    const double b = static_cast<double>(loo.size());
    return std::sqrt((b - 1.0) / b * s2);
}

namespace {

struct BlockAccumulator {
    std::vector<std::vector<CMat>> reduced;  // [sample][mode]
    std::vector<double> norm_sum, norm_sq;   // per sample
    std::vector<CMat> probes;
    double max_norm = 0.0;
};

} // namespace

EnsembleResult run_ensemble(const fock::SystemSpec& spec, const fock::FockSpace& space, const CVec& psi0,
                            const coeff::CoefficientTable& table, const NoiseModel& noise,
                            const EnsembleOptions& opts) {
    const std::size_t steps = checked_steps(opts);
    if (opts.trajectories < 1) throw std::invalid_argument("an ensemble needs at least one trajectory");
    if (opts.blocks < 1) throw std::invalid_argument("an ensemble needs at least one block");
    if (opts.workers < 1) throw std::invalid_argument("workers must be positive");
    if (psi0.size() != space.dimension()) throw std::invalid_argument("initial ket has the wrong dimension");
    const Generator gen(spec, space, opts.frame, max_excitation(space, psi0));
    const Eigen::Index dim = gen.dimension();
    const CVec start = gen.compress(psi0);
    if (table.num_modes() != spec.num_modes()) throw std::invalid_argument("coefficient table has the wrong mode count");
    if (table.t_max() < opts.t_max * (1.0 - 1e-12))
        throw std::invalid_argument("coefficient table ends before t_max");

    const auto samples = sample_steps(steps, opts.sample_stride);
    const auto probes = probe_steps(opts.probe_times, opts.dt, steps);
    const int modes = spec.num_modes();
    const auto nc = space.cutoff();
    const auto blocks = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(opts.blocks),
                                                                       opts.trajectories));

    // Operator coefficients at every stage time, shared by all trajectories.
    std::vector<OperatorCoefficients> coeffs(2 * steps + 1);
    for (std::size_t k = 0; k <= 2 * steps; ++k) {
        const double t = 0.5 * opts.dt * static_cast<double>(k);
        coeffs[k] = gen.coefficients(t, table.at(t));
    }

    EnsembleResult res;
    res.trajectories = opts.trajectories;
    res.steps = steps;
    res.block_sizes.resize(blocks);
    std::vector<std::size_t> first(blocks + 1);
    for (std::size_t b = 0; b <= blocks; ++b) first[b] = b * opts.trajectories / blocks;
    for (std::size_t b = 0; b < blocks; ++b) res.block_sizes[b] = first[b + 1] - first[b];

    const auto free = half_step_propagator(gen, opts.dt);
    std::vector<BlockAccumulator> acc(blocks);
    auto run_block = [&](std::size_t b) {
        BlockAccumulator& a = acc[b];
        a.reduced.assign(samples.size(), std::vector<CMat>(static_cast<std::size_t>(modes), CMat::Zero(nc, nc)));
        a.norm_sum.assign(samples.size(), 0.0);
        a.norm_sq.assign(samples.size(), 0.0);
        if (opts.record_full) a.probes.assign(probes.size(), CMat::Zero(dim, dim));
        TrajectoryStepper stepper(gen, free);
        for (std::size_t j = first[b]; j < first[b + 1]; ++j) {
            const auto path = noise.sample(0.5 * opts.dt, 2 * steps, env::derive_seed(opts.seed, j));
            CVec psi = start;
            std::size_t ns = 0, np = 0;
            for (std::size_t n = 0;; ++n) {
                if (ns < samples.size() && samples[ns] == n) {
                    if (!psi.allFinite())
                        throw NumericalError("trajectory " + std::to_string(j) + " became non-finite",
                                             static_cast<long>(n));
                    const double nrm = psi.squaredNorm();
                    a.norm_sum[ns] += nrm;
                    a.norm_sq[ns] += nrm * nrm;
                    a.max_norm = std::max(a.max_norm, nrm);
                    for (int m = 0; m < modes; ++m)
                        gen.accumulate_reduced(psi, m, a.reduced[ns][static_cast<std::size_t>(m)]);
                    ++ns;
                }
                if (np < probes.size() && probes[np] == n) {
                    if (opts.record_full) a.probes[np].noalias() += psi * psi.adjoint();
                    ++np;
                }
                if (n == steps) break;
                stepper.step(psi, coeffs[2 * n], coeffs[2 * n + 1], coeffs[2 * n + 2],
                             {path.z[2 * n], path.z[2 * n + 1], path.z[2 * n + 2]}, opts.dt);
            }
        }
        const double inv = 1.0 / static_cast<double>(first[b + 1] - first[b]);
        for (auto& per_sample : a.reduced)
            for (auto& m : per_sample) m *= inv;
        for (auto& p : a.probes) p *= inv;
    };

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(opts.workers), blocks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < blocks; ++b) run_block(b);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t b = next.fetch_add(1);
                    if (b >= blocks) return;
                    try {
                        run_block(b);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                        next.store(blocks);
                        return;
                    }
                }
            });
        for (auto& th : pool) th.join();
        if (error) std::rethrow_exception(error);
    }

    // Fixed-order reduction and conversion to the lab frame.
    const double M = static_cast<double>(opts.trajectories);
    res.sample_times.reserve(samples.size());
    for (auto k : samples) res.sample_times.push_back(opts.dt * static_cast<double>(k));
    res.reduced_blocks.resize(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        res.reduced_blocks[b] = std::move(acc[b].reduced);
        for (std::size_t s = 0; s < samples.size(); ++s)
            for (int m = 0; m < modes; ++m) {
                auto& r = res.reduced_blocks[b][s][static_cast<std::size_t>(m)];
                r = gen.reduced_to_lab(r, m, res.sample_times[s]);
            }
        res.max_norm = std::max(res.max_norm, acc[b].max_norm);
    }
    res.reduced.assign(samples.size(), std::vector<CMat>(static_cast<std::size_t>(modes), CMat::Zero(nc, nc)));
    res.trace_mean.assign(samples.size(), 0.0);
    res.trace_error.assign(samples.size(), 0.0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t b = 0; b < blocks; ++b) {
            const double w = static_cast<double>(res.block_sizes[b]) / M;
            for (int m = 0; m < modes; ++m)
                res.reduced[s][static_cast<std::size_t>(m)] += w * res.reduced_blocks[b][s][static_cast<std::size_t>(m)];
            sum += acc[b].norm_sum[s];
            sq += acc[b].norm_sq[s];
        }
        const double mean = sum / M;
        res.trace_mean[s] = mean;
        res.trace_error[s] = M > 1.0 ? std::sqrt(std::max(0.0, sq / M - mean * mean) / (M - 1.0))
                                     : std::numeric_limits<double>::quiet_NaN();
    }

    for (auto k : probes) res.probe_times.push_back(opts.dt * static_cast<double>(k));
    if (opts.record_full) {
        res.probe_blocks.resize(blocks);
        res.probe_mean.assign(probes.size(), CMat::Zero(space.dimension(), space.dimension()));
        std::vector<CMat> active_mean(probes.size(), CMat::Zero(dim, dim));
        for (std::size_t b = 0; b < blocks; ++b) {
            res.probe_blocks[b] = std::move(acc[b].probes);
            for (std::size_t p = 0; p < probes.size(); ++p) {
                auto& r = res.probe_blocks[b][p];
                r = gen.density_to_lab(r, res.probe_times[p]);
                active_mean[p] += (static_cast<double>(res.block_sizes[b]) / M) * r;
                r = gen.expand(r);
            }
        }
        for (std::size_t p = 0; p < probes.size(); ++p) {
            update_state_monitors(gen, active_mean[p], res.monitors, true);
            res.probe_mean[p] = gen.expand(active_mean[p]);
        }
    }
    for (std::size_t s = 0; s < samples.size(); ++s) {
        res.monitors.max_trace_drift = std::max(res.monitors.max_trace_drift, std::abs(res.trace_mean[s] - 1.0));
        for (int m = 0; m < modes; ++m) {
            const auto& r = res.reduced[s][static_cast<std::size_t>(m)];
            res.monitors.max_top_population = std::max(res.monitors.max_top_population, r(nc - 1, nc - 1).real());
        }
    }

    res.fidelity = fidelity_curve(res.sample_times, res.reduced, modes, opts.alpha, opts.theta_grid);
    res.fidelity_error.assign(static_cast<std::size_t>(modes),
                              std::vector<double>(samples.size(), std::numeric_limits<double>::quiet_NaN()));
    if (blocks < 2) return res;
    for (std::size_t s = 0; s < samples.size(); ++s)
        for (int m = 0; m < modes; ++m) {
            std::vector<CMat> per_block;
            for (std::size_t b = 0; b < blocks; ++b) per_block.push_back(res.reduced_blocks[b][s][static_cast<std::size_t>(m)]);
            const auto loo = leave_one_out(per_block, res.block_sizes);
            std::vector<double> f;
            double mean = 0.0;
            for (const auto& r : loo) {
                f.push_back(obs::transfer_fidelity(r, opts.alpha, opts.theta_grid).fidelity);
                mean += f.back();
            }
            mean /= static_cast<double>(f.size());
            double s2 = 0.0;
            for (double v : f) s2 += (v - mean) * (v - mean);
            const double nb = static_cast<double>(f.size());
            res.fidelity_error[static_cast<std::size_t>(m)][s] = std::sqrt((nb - 1.0) / nb * s2);
        }
    return res;
}

fock::Ket default_initial_state(const fock::FockSpace& space, cplx alpha, int mode) {
    return fock::cat_state(space, mode, alpha);
}

} // namespace cradle::dyn
