#include "cradle/dynamics.hpp"

#include "coherent_closure.hpp"

#include "doctest.h"

#include <cmath>

using namespace cradle;
using doctest::Approx;

namespace {

coeff::CoefficientTable zero_table(int modes, double dt, double t_max) {
    coeff::CoefficientTable t;
    t.dt = dt;
    t.F.assign(static_cast<std::size_t>(std::llround(t_max / dt)) + 1, CVec::Zero(modes));
    return t;
}

CMat dense(const fock::ModeOp& op) { return CMat(op.matrix); }

CMat pure(const CVec& v) { return v * v.adjoint(); }

// exp(-i H t) psi by diagonalisation.
CVec evolve(const CMat& h, const CVec& psi, double t) {
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    const CVec phase = (es.eigenvalues().cast<cplx>() * cplx(0, -t)).array().exp();
    return es.eigenvectors() * phase.asDiagonal() * (es.eigenvectors().adjoint() * psi);
}

double total_photons(const std::vector<CMat>& reduced) {
    double n = 0.0;
    for (const auto& r : reduced)
        for (Eigen::Index k = 0; k < r.rows(); ++k) n += static_cast<double>(k) * r(k, k).real();
    return n;
}

const fock::SystemSpec kHop{{1.0, 1.2}, {0.5, 0.0}, {1.0, 0.7}};

fock::SystemSpec kHop3() { return {{1.0, 1.2, 0.9}, {0.5, 0.8, 0.0}, {1.0, 0.7, 1.3}}; }

} // namespace

TEST_SUITE("dynamics") {

TEST_CASE("unitary master step keeps purity") {
    const fock::FockSpace space(2, 8);
    const dyn::Generator gen(kHop, space);
    CMat rho = pure(fock::cat_state(space, 0, 1.0).amplitudes);
    const dyn::StageF zero{CVec::Zero(2), CVec::Zero(2), CVec::Zero(2)};
    const double p0 = obs::purity(rho);
    for (int n = 0; n < 20; ++n) {
        rho = dyn::step_master(gen, rho, 0.02 * n, zero, 0.02);
        CHECK(std::abs(obs::purity(rho) - p0) <= 1e-10);
    }
}

TEST_CASE("master step preserves trace and Hermiticity") {
    const fock::FockSpace space(2, 12);
    const dyn::Generator gen(kHop, space);
    const auto table = coeff::solve_F_ou_fast(kHop, {1.0, 0.3, 4.0}, 0.01, 4.0);
    CMat rho = pure(fock::cat_state(space, 0, 1.0).amplitudes);
    // Positivity errors scale as dt^4; dt = 0.02 already sits near -1e-8 here.
    for (int n = 0; n < 400; ++n) {
        const double t = 0.01 * n;
        const CMat next = dyn::step_master(gen, rho, t, dyn::stage_coefficients(table, t, 0.01), 0.01);
        CHECK(std::abs(next.trace() - rho.trace()) <= 1e-10);
        CHECK((next - next.adjoint()).cwiseAbs().maxCoeff() <= 1e-12);
        rho = next;
    }
    CHECK(fock::DensOp{space, rho}.min_eigenvalue() >= -1e-8);
}

TEST_CASE("single steps reject bad input") {
    const fock::FockSpace space(2, 4);
    const dyn::Generator gen(kHop, space);
    const dyn::StageF zero{CVec::Zero(2), CVec::Zero(2), CVec::Zero(2)};
    CHECK_THROWS_AS(dyn::step_master(gen, CMat::Identity(3, 3), 0.0, zero, 0.1), std::invalid_argument);
    CMat bad = CMat::Identity(16, 16);
    bad(2, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(dyn::step_master(gen, bad, 0.0, zero, 0.1), NumericalError);
    CHECK_THROWS_AS(dyn::step_trajectory(gen, CVec::Zero(5), 0.0, zero, {}, 0.1), std::invalid_argument);
}

TEST_CASE("Markov run matches a direct Lindblad integration") {
    const fock::FockSpace space(2, 6);
    const double gamma_big = 0.8, dt = 0.01, t_max = 2.0;
    const auto table = coeff::markov_coefficients(kHop, gamma_big, dt / 2, t_max);
    const CMat rho0 = pure(fock::coherent_state(space, 0, 0.8, 0.05).amplitudes);
    dyn::MasterOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.frame = dyn::Frame::lab;
    o.probe_times = {1.0, t_max};
    o.alpha = 0.8;
    const auto run = dyn::run_master(kHop, space, rho0, table, o);

    // Dense reference: d rho/dt = -i[H, rho] + Gamma (A rho A^dag - {A^dag A, rho}/2).
    const CMat h = dense(fock::build_system_hamiltonian(kHop, space));
    const CMat a = dense(fock::collective_operator(kHop, space));
    const CMat ada = a.adjoint() * a;
    const auto L = [&](const CMat& r) -> CMat {
        return -kI * (h * r - r * h) + gamma_big * (a * r * a.adjoint() - 0.5 * (ada * r + r * ada));
    };
    CMat rho = rho0;
    for (int n = 0; n < 200; ++n) {
        const CMat k1 = L(rho), k2 = L(rho + 0.5 * dt * k1), k3 = L(rho + 0.5 * dt * k2), k4 = L(rho + dt * k3);
        rho += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (n == 99) CHECK((run.probe_states[0] - rho).cwiseAbs().maxCoeff() <= 1e-10);
    }
    CHECK((run.probe_states[1] - rho).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("decoupled environment gives the Schroedinger evolution") {
    const fock::FockSpace space(2, 10);
    const double dt = 0.01, t_max = 3.0;
    const CVec psi0 = fock::cat_state(space, 0, 1.0).amplitudes;
    dyn::MasterOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.probe_times = {1.5, 3.0};
    o.alpha = 1.0;
    const auto run = dyn::run_master(kHop, space, pure(psi0), zero_table(2, dt / 2, t_max), o);
    const CMat h = dense(fock::build_system_hamiltonian(kHop, space));
    for (std::size_t p = 0; p < 2; ++p) {
        const CVec exact = evolve(h, psi0, run.probe_times[p]);
        const double f = (exact.adjoint() * run.probe_states[p] * exact)(0).real();
        CHECK(f == Approx(1.0).epsilon(1e-8));
    }
    CHECK(run.monitors.max_purity_change <= 1e-10);
}

TEST_CASE("excitation bookkeeping") {
    const fock::FockSpace space(2, 10);
    const double dt = 0.02, t_max = 4.0;
    const CMat rho0 = pure(fock::cat_state(space, 0, 1.2).amplitudes);
    dyn::MasterOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.sample_stride = 5;
    o.alpha = 1.2;
    const auto lossy = dyn::run_master(kHop, space, rho0, coeff::markov_coefficients(kHop, 1.0, dt / 2, t_max), o);
    for (std::size_t s = 1; s < lossy.reduced.size(); ++s)
        CHECK(total_photons(lossy.reduced[s]) <= total_photons(lossy.reduced[s - 1]) + 1e-12);
    const auto closed = dyn::run_master(kHop, space, rho0, zero_table(2, dt / 2, t_max), o);
    const double n0 = total_photons(closed.reduced[0]);
    for (const auto& r : closed.reduced) CHECK(total_photons(r) == Approx(n0).epsilon(1e-10));
}

TEST_CASE("rotating and lab frames agree") {
    const fock::FockSpace space(2, 10);
    const double dt = 0.01, t_max = 3.0;
    const auto table = coeff::solve_F_ou_fast(kHop, {1.0, 0.5, 3.0}, dt / 2, t_max);
    const CMat rho0 = pure(fock::cat_state(space, 0, 1.0).amplitudes);
    dyn::MasterOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.probe_times = {t_max};
    o.alpha = 1.0;
    const auto inter = dyn::run_master(kHop, space, rho0, table, o);
    o.frame = dyn::Frame::rotating;
    const auto rot = dyn::run_master(kHop, space, rho0, table, o);
    o.frame = dyn::Frame::lab;
    const auto lab = dyn::run_master(kHop, space, rho0, table, o);
    CHECK((rot.probe_states[0] - lab.probe_states[0]).norm() <= 1e-6);
    CHECK((inter.probe_states[0] - lab.probe_states[0]).norm() <= 1e-6);
    CHECK(std::abs(rot.fidelity.fidelity[1].back() - lab.fidelity.fidelity[1].back()) <= 1e-6);
    CHECK(std::abs(inter.fidelity.fidelity[1].back() - lab.fidelity.fidelity[1].back()) <= 1e-6);
}

TEST_CASE("free propagator matches the dense exponential") {
    const fock::SystemSpec spec{{1.0, 1.3, 0.8}, {0.7, 0.4, 0.0}, {1.0, 1.0, 1.0}};
    const fock::FockSpace space(3, 4);
    const dyn::Generator gen(spec, space);
    const dyn::FreePropagator prop(gen, 0.3);
    CHECK(prop.largest_block() > 1);
    const CMat h = dense(fock::build_system_hamiltonian(spec, space));
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    const CVec ph = (es.eigenvalues().cast<cplx>() * cplx(0, -0.3)).array().exp();
    const CMat u = es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
    CVec v = CVec::Random(space.dimension());
    const CVec expected = u * v;
    prop.apply(v);
    CHECK((v - expected).norm() <= 1e-12);
    CMat x = CMat::Random(space.dimension(), space.dimension());
    const CMat conj = u * x * u.adjoint();
    prop.conjugate(x);
    CHECK((x - conj).norm() <= 1e-12);

    const fock::SystemSpec uncoupled{{1.0, 2.0}, {0.0, 0.0}, {1.0, 1.0}};
    const dyn::Generator g2(uncoupled, fock::FockSpace(2, 5));
    CHECK(dyn::FreePropagator(g2, 0.1).largest_block() == 1);
}

TEST_CASE("active basis holds the excitation-limited subspace exactly") {
    const fock::FockSpace space(3, 6);
    const CVec psi0 = fock::coherent_state(space, 0, 0.8).amplitudes;
    CHECK(dyn::max_excitation(space, psi0) == 5);
    CHECK(dyn::max_excitation(space, CMat(pure(psi0))) == 5);
    const dyn::Generator small(kHop3(), space, dyn::Frame::interaction, 5);
    CHECK(small.dimension() == 56);
    CHECK((small.expand(small.compress(psi0)) - psi0).norm() == 0.0);

    // Reduced states agree with the full partial trace.
    const CMat rho = pure(psi0);
    for (int m = 0; m < 3; ++m) {
        const CMat full = fock::partial_trace({space, rho}, m).matrix;
        CHECK((small.reduced(small.compress(rho), m) - full).norm() <= 1e-14);
        CMat acc = CMat::Zero(6, 6);
        small.accumulate_reduced(small.compress(psi0), m, acc);
        CHECK((acc - full).norm() <= 1e-14);
    }

    // One step on the restricted basis equals one full-space step.
    const dyn::Generator full(kHop3(), space, dyn::Frame::lab);
    const dyn::Generator part(kHop3(), space, dyn::Frame::lab, 5);
    const CVec F = (CVec(3) << cplx(0.2, 0.1), cplx(0.1, -0.05), cplx(0.3, 0.0)).finished();
    const dyn::StageF f{F, 1.1 * F, 1.2 * F};
    const CMat a = dyn::step_master(full, rho, 0.0, f, 0.05);
    const CMat b = part.expand(dyn::step_master(part, part.compress(rho), 0.0, f, 0.05));
    CHECK((a - b).norm() <= 1e-13);
    const CVec ka = dyn::step_trajectory(full, psi0, 0.0, f, {cplx(0.3, 0.1), cplx(0.2), cplx(-0.1, 0.4)}, 0.05);
    const CVec kb = part.expand(dyn::step_trajectory(part, part.compress(psi0), 0.0, f,
                                                     {cplx(0.3, 0.1), cplx(0.2), cplx(-0.1, 0.4)}, 0.05));
    CHECK((ka - kb).norm() <= 1e-13);
}

TEST_CASE("closed-system steps converge at fourth order") {
    const fock::FockSpace space(2, 8);
    const CVec psi0 = fock::cat_state(space, 0, 1.0).amplitudes;
    const CMat h = dense(fock::build_system_hamiltonian(kHop, space));
    const double t_max = 2.0;
    const CVec exact = evolve(h, psi0, t_max);
    std::vector<double> err;
    for (double dt : {0.2, 0.1}) {
        dyn::MasterOptions o;
        o.dt = dt;
        o.t_max = t_max;
        o.frame = dyn::Frame::lab;
        o.probe_times = {t_max};
        o.alpha = 1.0;
        const auto run = dyn::run_master(kHop, space, pure(psi0), zero_table(2, dt / 2, t_max), o);
        err.push_back((run.probe_states[0] - pure(exact)).norm());
    }
    CHECK(err[0] / err[1] == Approx(16.0).epsilon(0.25));

    // The interaction frame propagates the closed system exactly.
    dyn::MasterOptions o;
    o.dt = 0.2;
    o.t_max = t_max;
    o.probe_times = {t_max};
    o.alpha = 1.0;
    const auto run = dyn::run_master(kHop, space, pure(psi0), zero_table(2, 0.1, t_max), o);
    CHECK((run.probe_states[0] - pure(exact)).norm() <= 1e-12);
}

TEST_CASE("table-interpolated coefficients converge at least at second order") {
    const fock::FockSpace space(2, 8);
    const CMat rho0 = pure(fock::cat_state(space, 0, 1.0).amplitudes);
    const double t_max = 4.0;
    const env::LorentzSpec env{1.0, 0.5, 3.0};
    std::vector<CMat> out;
    for (double dt : {0.1, 0.05, 0.025}) {
        dyn::MasterOptions o;
        o.dt = dt;
        o.t_max = t_max;
        o.probe_times = {t_max};
        o.alpha = 1.0;
        const auto table = coeff::solve_F_ou_fast(kHop, env, dt, t_max);
        out.push_back(dyn::run_master(kHop, space, rho0, table, o).probe_states[0]);
    }
    const double d1 = (out[0] - out[1]).norm(), d2 = (out[1] - out[2]).norm();
    CHECK(d1 / d2 >= 3.5);
}

TEST_CASE("built-in dt-halving check") {
    const fock::FockSpace space(2, 10);
    const double dt = 0.02, t_max = 5.0;
    const auto table = coeff::solve_F_ou_fast(kHop, {1.0, 0.5, 3.0}, dt / 4, t_max);
    dyn::MasterOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.alpha = 1.0;
    o.halving_check = true;
    const auto run = dyn::run_master(kHop, space, pure(fock::cat_state(space, 0, 1.0).amplitudes), table, o);
    CHECK(run.halving.performed);
    CHECK(run.halving.passed);
    CHECK(run.halving.sup_change < 5e-3);
    CHECK(run.halving.coarse.size() == run.fidelity.t.size());
}

TEST_CASE("master run matches the coherent-branch reference") {
    const fock::FockSpace space(2, 14);
    const double dt = 0.02, t_max = 20.0;
    const fock::SystemSpec spec{{1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}};
    const env::LorentzSpec env{1.0, 0.1, 10.0};
    dyn::MasterOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.sample_stride = 25;
    o.alpha = 1.5;
    const auto run = dyn::run_master(spec, space, pure(fock::cat_state(space, 0, 1.5).amplitudes),
                                     coeff::solve_F_ou_fast(spec, env, dt / 2, t_max), o);
    const auto ref = closure::run({{1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}, 1.0, 0.1, 10.0, false, 1.5}, t_max, 0.5);
    REQUIRE(ref.t.size() == run.fidelity.t.size());
    for (int m = 0; m < 2; ++m)
        for (std::size_t s = 0; s < ref.t.size(); ++s)
            CHECK(std::abs(run.fidelity.fidelity[static_cast<std::size_t>(m)][s] - ref.fidelity[static_cast<std::size_t>(m)][s]) <= 1e-4);
}

TEST_CASE("trajectory step without noise or memory is unitary") {
    const fock::FockSpace space(2, 8);
    const dyn::Generator gen(kHop, space);
    CVec psi = fock::cat_state(space, 0, 1.0).amplitudes;
    const dyn::StageF zero{CVec::Zero(2), CVec::Zero(2), CVec::Zero(2)};
    for (int n = 0; n < 20; ++n) {
        psi = dyn::step_trajectory(gen, psi, 0.01 * n, zero, {}, 0.01);
        CHECK(psi.norm() == Approx(1.0).epsilon(1e-10));
    }
    const dyn::StageF f{CVec::Constant(2, 0.3), CVec::Constant(2, 0.3), CVec::Constant(2, 0.3)};
    const CVec kicked = dyn::step_trajectory(gen, psi, 0.0, f, {cplx(0.4, 0.2), cplx(0.3, 0.1), cplx(0.1, -0.2)}, 0.05);
    CHECK(std::abs(kicked.norm() - 1.0) > 1e-4);
}

TEST_CASE("trajectory RHS matches the dense operator form") {
    const fock::FockSpace space(2, 6);
    const dyn::Generator gen(kHop, space, dyn::Frame::lab);
    const CVec F = (CVec(2) << cplx(0.2, -0.1), cplx(0.05, 0.3)).finished();
    const auto c = gen.coefficients(0.7, F);
    const CVec psi = CVec::Random(space.dimension());
    const cplx zc(0.3, -0.8);
    CVec out(space.dimension()), scratch(space.dimension());
    gen.trajectory_rhs(psi, c, zc, out, scratch);
    const CMat h = dense(fock::build_system_hamiltonian(kHop, space));
    const CMat a = dense(fock::collective_operator(kHop, space));
    CMat obar = CMat::Zero(space.dimension(), space.dimension());
    for (int k = 0; k < 2; ++k) obar += F(k) * dense(fock::mode_annihilator(space, k));
    const CVec want = -kI * h * psi + zc * a * psi - a.adjoint() * obar * psi;
    CHECK((out - want).norm() <= 1e-13 * want.norm());

    const CMat rho = pure(psi) / psi.squaredNorm();
    CMat mout(space.dimension(), space.dimension());
    std::array<CMat, 2> mscratch;
    gen.master_rhs(rho, c, mout, mscratch);
    const CMat v = -kI * h * rho - a.adjoint() * obar * rho + obar * rho * a.adjoint();
    CHECK((mout - (v + v.adjoint())).norm() <= 1e-13 * v.norm());
}

TEST_CASE("decoupled single-trajectory ensemble is the closed-system projector") {
    const fock::FockSpace space(2, 8);
    const double dt = 0.01, t_max = 2.0;
    const CVec psi0 = fock::cat_state(space, 0, 1.0).amplitudes;
    dyn::EnsembleOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.trajectories = 1;
    o.blocks = 1;
    o.record_full = true;
    o.probe_times = {t_max};
    o.alpha = 1.0;
    const auto noise = dyn::NoiseModel::from_kernel(env::ou_kernel({0.0, 0.5, 1.0}));
    const auto run = dyn::run_ensemble(kHop, space, psi0, zero_table(2, dt / 2, t_max), noise, o);
    const CVec exact = evolve(dense(fock::build_system_hamiltonian(kHop, space)), psi0, t_max);
    CHECK((run.probe_mean[0] - pure(exact)).norm() <= 1e-8);
}

TEST_CASE("ensemble agrees with the master equation at the Monte-Carlo rate") {
    const fock::FockSpace space(2, 10);
    const double dt = 0.02, t_max = 6.0;
    const fock::SystemSpec spec{{1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}};
    const env::LorentzSpec env{1.0, 0.5, 4.0};
    const auto table = coeff::solve_F_ou_fast(spec, env, dt / 2, t_max);
    const CVec psi0 = fock::cat_state(space, 0, 1.0).amplitudes;
    dyn::EnsembleOptions eo;
    eo.dt = dt;
    eo.t_max = t_max;
    eo.trajectories = 400;
    eo.blocks = 20;
    eo.workers = 2;
    eo.seed = 2024;
    eo.record_full = true;
    eo.probe_times = {2.0, 4.0, 6.0};
    eo.alpha = 1.0;
    const auto ens = dyn::run_ensemble(spec, space, psi0, table, dyn::NoiseModel::from_kernel(env::ou_kernel(env)), eo);
    dyn::MasterOptions mo;
    mo.dt = dt;
    mo.t_max = t_max;
    mo.probe_times = eo.probe_times;
    mo.alpha = 1.0;
    const auto master = dyn::run_master(spec, space, pure(psi0), table, mo);
    for (std::size_t p = 0; p < 3; ++p) {
        std::vector<CMat> blocks;
        for (const auto& b : ens.probe_blocks) blocks.push_back(b[p]);
        const double err = dyn::jackknife_trace_error(blocks, ens.block_sizes);
        const double d = obs::trace_distance(ens.probe_mean[p], master.probe_states[p]);
        CHECK(err > 0.0);
        CHECK(d <= 3.0 * err);
    }
    for (std::size_t s = 0; s < ens.trace_mean.size(); ++s)
        CHECK(std::abs(ens.trace_mean[s] - 1.0) <= 4.0 * ens.trace_error[s] + 1e-12);
}

TEST_CASE("ensembles are reproducible and independent of the worker count") {
    const fock::FockSpace space(2, 8);
    const double dt = 0.05, t_max = 2.0;
    const fock::SystemSpec spec{{1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}};
    const env::LorentzSpec env{1.0, 0.5, 2.0};
    const auto table = coeff::solve_F_ou_fast(spec, env, dt / 2, t_max);
    dyn::EnsembleOptions o;
    o.dt = dt;
    o.t_max = t_max;
    o.trajectories = 24;
    o.blocks = 6;
    o.seed = 9;
    o.alpha = 1.0;
    const auto noise = dyn::NoiseModel::from_kernel(env::ou_kernel(env));
    const CVec psi0 = fock::cat_state(space, 0, 1.0).amplitudes;
    const auto a = dyn::run_ensemble(spec, space, psi0, table, noise, o);
    o.workers = 3;
    const auto b = dyn::run_ensemble(spec, space, psi0, table, noise, o);
    for (std::size_t s = 0; s < a.reduced.size(); ++s)
        for (int m = 0; m < 2; ++m) CHECK(a.reduced[s][static_cast<std::size_t>(m)] == b.reduced[s][static_cast<std::size_t>(m)]);
    CHECK(a.fidelity.fidelity == b.fidelity.fidelity);
    o.seed = 10;
    const auto c = dyn::run_ensemble(spec, space, psi0, table, noise, o);
    CHECK(a.fidelity.fidelity != c.fidelity.fidelity);
}

TEST_CASE("single trajectories are reproducible per seed") {
    const fock::FockSpace space(2, 8);
    const dyn::Generator gen(kHop, space);
    const auto table = coeff::solve_F_ou_fast(kHop, {1.0, 0.5, 2.0}, 0.025, 1.0);
    const auto noise = dyn::NoiseModel::from_kernel(env::ou_kernel({1.0, 0.5, 2.0}));
    auto run = [&](std::uint64_t seed) {
        const auto path = noise.sample(0.025, 40, seed);
        CVec psi = fock::cat_state(space, 0, 1.0).amplitudes;
        for (std::size_t n = 0; n < 20; ++n)
            psi = dyn::step_trajectory(gen, psi, 0.05 * n, dyn::stage_coefficients(table, 0.05 * n, 0.05),
                                       {path.z[2 * n], path.z[2 * n + 1], path.z[2 * n + 2]}, 0.05);
        return psi;
    };
    CHECK(run(5) == run(5));
    CHECK(run(5) != run(6));
}

TEST_CASE("delta kernels have no trajectory noise model") {
    CHECK_THROWS_AS(dyn::NoiseModel::from_kernel(env::markovian_kernel(1.0)), ConfigError);
}

}
