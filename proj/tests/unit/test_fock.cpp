#include "cradle/fock.hpp"
#include "cradle/observables.hpp"

#include "doctest.h"

#include <cmath>

using namespace cradle;
using doctest::Approx;

namespace {

CMat dense(const fock::ModeOp& op) { return CMat(op.matrix); }

double commutator_norm(const CMat& a, const CMat& b) { return (a * b - b * a).norm(); }

} // namespace

TEST_SUITE("fock") {

TEST_CASE("single-mode annihilator matrix elements") {
    const fock::FockSpace space(1, 3);
    const CMat a = dense(fock::mode_annihilator(space, 0));
    CMat expected = CMat::Zero(3, 3);
    expected(0, 1) = 1.0;
    expected(1, 2) = std::sqrt(2.0);
    CHECK((a - expected).norm() == 0.0);
    CHECK((dense(fock::mode_creator(space, 0)) - a.adjoint()).norm() == 0.0);
}

TEST_CASE("truncated commutator deviates only on the top level") {
    const fock::FockSpace space(2, 5);
    for (int m = 0; m < 2; ++m) {
        const CMat a = dense(fock::mode_annihilator(space, m));
        const CMat c = a * a.adjoint() - a.adjoint() * a;
        for (Eigen::Index i = 0; i < space.dimension(); ++i)
            for (Eigen::Index j = 0; j < space.dimension(); ++j) {
                const bool top = space.occupation(i, m) == space.cutoff() - 1;
                const cplx want = i == j ? cplx(top ? 1.0 - space.cutoff() : 1.0) : cplx(0.0);
                CHECK(std::abs(c(i, j) - want) < 1e-13);
            }
    }
}

TEST_CASE("distinct modes commute") {
    const fock::FockSpace space(3, 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            const CMat ai = dense(fock::mode_annihilator(space, i));
            const CMat aj = dense(fock::mode_annihilator(space, j));
            CHECK(commutator_norm(ai, aj) <= 1e-13);
            CHECK(commutator_norm(ai, aj.adjoint()) <= 1e-13);
        }
}

TEST_CASE("invalid mode index is rejected") {
    const fock::FockSpace space(2, 4);
    CHECK_THROWS_AS(fock::mode_annihilator(space, 2), std::out_of_range);
    CHECK_THROWS_AS(fock::mode_annihilator(space, -1), std::out_of_range);
}

TEST_CASE("decoupled Hamiltonian is diagonal in the number basis") {
    fock::SystemSpec spec{{1.0, 1.7}, {0.0, 0.0}, {1.0, 1.0}};
    const fock::FockSpace space(2, 6);
    const CMat h = dense(fock::build_system_hamiltonian(spec, space));
    for (Eigen::Index i = 0; i < space.dimension(); ++i)
        for (Eigen::Index j = 0; j < space.dimension(); ++j) {
            const cplx want = i == j ? cplx(1.0 * space.occupation(i, 0) + 1.7 * space.occupation(i, 1)) : cplx(0.0);
            CHECK(std::abs(h(i, j) - want) < 1e-14);
        }
}

TEST_CASE("hopping conserves the excitation number and stays Hermitian") {
    fock::SystemSpec spec{{1.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 1.0, 1.0}};
    const fock::FockSpace space(3, 5);
    const CMat h = dense(fock::build_system_hamiltonian(spec, space));
    const CMat n = dense(fock::total_number_operator(space));
    CHECK(commutator_norm(h, n) <= 1e-12);
    CHECK((h - h.adjoint()).cwiseAbs().maxCoeff() <= 1e-14);

    spec.lambdas = {0.3, -2.1, 0.0};
    const CMat h2 = dense(fock::build_system_hamiltonian(spec, space));
    CHECK(commutator_norm(h2, n) <= 1e-12);
}

TEST_CASE("Hamiltonian rejects a mismatched space") {
    const auto spec = fock::SystemSpec::uniform(2);
    CHECK_THROWS_AS(fock::build_system_hamiltonian(spec, fock::FockSpace(3, 3)), std::invalid_argument);
}

TEST_CASE("collective operator") {
    const fock::FockSpace space(2, 4);
    auto spec = fock::SystemSpec::uniform(2);
    const CMat a = dense(fock::collective_operator(spec, space));
    const CMat sum = dense(fock::mode_annihilator(space, 0)) + dense(fock::mode_annihilator(space, 1));
    CHECK((a - sum).norm() == 0.0);

    spec.weights = {1.0, 0.0};
    const CMat a1 = dense(fock::collective_operator(spec, space));
    CHECK((a1 - dense(fock::mode_annihilator(space, 0))).norm() == 0.0);
}

TEST_CASE("asymmetry helper") {
    auto spec = fock::SystemSpec::uniform(3);
    spec.weights = {1.0, 0.5, 1.5};
    CHECK(fock::asymmetry(spec) == Approx(0.5).epsilon(1e-15));
    const auto w = fock::weights_for_asymmetry(0.25);
    spec.weights = w;
    CHECK(fock::asymmetry(spec) == Approx(0.25).epsilon(1e-15));
    CHECK_THROWS(fock::asymmetry(fock::SystemSpec::uniform(2)));
}

TEST_CASE("coherent states") {
    const fock::FockSpace space(2, 24);
    const auto vac = fock::coherent_state(space, 0, 0.0);
    CHECK((vac.amplitudes - fock::vacuum(space).amplitudes).norm() < 1e-15);

    const auto psi = fock::coherent_state(space, 1, 2.0);
    CHECK(psi.norm() == Approx(1.0).epsilon(1e-12));
    CHECK(obs::mean_photon(psi, 1) == Approx(4.0).epsilon(1e-3 / 4.0));
    CHECK(std::abs(obs::mean_photon(psi, 0)) < 1e-15);

    const CVec plus = fock::coherent_amplitudes(24, 2.0);
    const CVec minus = fock::coherent_amplitudes(24, -2.0);
    CHECK(std::abs(plus.dot(minus) - std::exp(-8.0)) < 1e-8);
}

TEST_CASE("cutoff rule") {
    const auto ok = fock::check_cutoff(24, 2.0);
    CHECK(ok.recommended == 20);
    CHECK(ok.meets_rule);
    const auto small = fock::check_cutoff(8, 2.0);
    CHECK_FALSE(small.meets_rule);
    CHECK(small.tail_mass > 1e-3);
    CHECK_THROWS_AS(fock::coherent_amplitudes(4, 2.0), std::invalid_argument);
}

TEST_CASE("cat states") {
    const fock::FockSpace space(1, 24);
    const auto cat = fock::cat_state(space, 0, 2.0);
    CHECK(cat.norm() == Approx(1.0).epsilon(1e-10));
    for (Eigen::Index n = 1; n < space.dimension(); n += 2) CHECK(std::abs(cat.amplitudes(n)) < 1e-15);
    const double p0 = std::norm(cat.amplitudes(0));
    CHECK(p0 == Approx(4.0 * std::exp(-4.0) / fock::cat_normalization(2.0)).epsilon(1e-6));
    CHECK(p0 == Approx(0.03663).epsilon(1e-3));
    CHECK(fock::cat_normalization(2.0) == Approx(2.0 * (1.0 + std::exp(-8.0))));

    // The rotated cat is the phase-rotated even cat.
    const auto rot = fock::cat_state(space, 0, 2.0, 0.4);
    for (Eigen::Index n = 0; n < space.dimension(); ++n)
        CHECK(std::abs(rot.amplitudes(n) - cat.amplitudes(n) * std::exp(cplx(0, -0.4 * static_cast<double>(n)))) < 1e-12);
}

TEST_CASE("partial trace") {
    const fock::FockSpace space(2, 4);
    CVec f0(4), f1(4);
    f0 << 0.6, 0.0, cplx(0.0, 0.8), 0.0;
    f1 << 0.0, 1.0, 0.0, 0.0;
    const std::vector<CVec> factors{f0, f1};
    const auto prod = fock::product_state(space, factors);
    const auto rho = fock::projector(prod);
    const auto r0 = fock::partial_trace(rho, 0);
    CHECK((r0.matrix - f0 * f0.adjoint()).norm() < 1e-15);
    CHECK((fock::partial_trace(rho, 1).matrix - f1 * f1.adjoint()).norm() < 1e-15);

    // (|10> + |01>)/sqrt 2
    CVec bell = CVec::Zero(space.dimension());
    bell(space.stride(0)) = 1.0 / std::sqrt(2.0);
    bell(space.stride(1)) = 1.0 / std::sqrt(2.0);
    const auto rb = fock::partial_trace(fock::projector({space, bell}), 1);
    CMat want = CMat::Zero(4, 4);
    want(0, 0) = want(1, 1) = 0.5;
    CHECK((rb.matrix - want).norm() < 1e-15);
    CHECK((fock::reduced_dyad(space, bell, 1) - want).norm() < 1e-15);

    CMat rnd = CMat::Random(space.dimension(), space.dimension());
    rnd = rnd * rnd.adjoint();
    const fock::DensOp mixed{space, rnd};
    for (int m = 0; m < 2; ++m)
        CHECK(std::abs(fock::partial_trace(mixed, m).trace() - mixed.trace()) < 1e-12 * std::abs(mixed.trace()));
    CHECK_THROWS(fock::partial_trace(mixed, 2));
}

TEST_CASE("expectation values") {
    const fock::FockSpace space(2, 24);
    const auto n0 = fock::number_operator(space, 0);
    CHECK(std::abs(fock::expectation(fock::vacuum(space), n0)) == 0.0);
    const auto coh = fock::coherent_state(space, 0, cplx(1.2, 1.6));
    CHECK(fock::expectation(coh, n0).real() == Approx(4.0).epsilon(1e-3));
    const auto rho = fock::projector(coh);
    const auto x = fock::ModeOp{space, fock::mode_annihilator(space, 0).matrix + fock::mode_creator(space, 0).matrix};
    CHECK(std::abs(fock::expectation(rho, x).imag()) <= 1e-12);
    CHECK(fock::expectation(rho, x).real() == Approx(2.4).epsilon(1e-6));
    CHECK_THROWS_AS(fock::expectation(fock::vacuum(fock::FockSpace(1, 24)), n0), std::invalid_argument);
}

TEST_CASE("unitary evolution conserves the excitation number") {
    fock::SystemSpec spec{{1.0, 1.3, 0.8}, {0.7, -0.4, 0.0}, {1.0, 1.0, 1.0}};
    const fock::FockSpace space(3, 4);
    const CMat h = dense(fock::build_system_hamiltonian(spec, space));
    const CMat n = dense(fock::total_number_operator(space));
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    CVec psi = fock::coherent_state(space, 0, 0.5, 0.05).amplitudes;
    const double n_start = (psi.adjoint() * n * psi)(0).real();
    for (double t : {0.5, 2.0, 7.3}) {
        const CVec phase = (es.eigenvalues().cast<cplx>() * cplx(0, -t)).array().exp();
        const CVec out = es.eigenvectors() * phase.asDiagonal() * es.eigenvectors().adjoint() * psi;
        CHECK((out.adjoint() * n * out)(0).real() == Approx(n_start).epsilon(1e-12));
    }
}

}
