// observables.hpp - cat-transfer fidelity, Wigner functions and simple moments.

#pragma once

#include "cradle/fock.hpp"

#include <filesystem>
#include <vector>

namespace cradle::obs {

struct FidelityResult {
    double fidelity = 0.0;
    double theta = 0.0;        // maximizer in [0, 2 pi)
    double coarse_max = 0.0;   // best value on the initial grid
};

// max_theta <cat(alpha, theta)| rho |cat(alpha, theta)> for a single-mode rho.
// The objective is a trigonometric polynomial in theta; it is scanned on `grid`
// points and refined by successive parabolic interpolation.
FidelityResult transfer_fidelity(const CMat& rho, cplx alpha, int grid = 256);
FidelityResult transfer_fidelity(const fock::DensOp& rho, cplx alpha, int grid = 256);

struct FidelityCurve {
    std::vector<double> t;
    std::vector<std::vector<double>> fidelity;  // [mode][sample]
    std::vector<std::vector<double>> theta;     // [mode][sample]

    int num_modes() const noexcept { return static_cast<int>(fidelity.size()); }
    double max_fidelity(int mode) const;
    std::size_t argmax(int mode) const;
};

void save_fidelity_csv(const std::filesystem::path& path, const FidelityCurve& curve);
FidelityCurve load_fidelity_csv(const std::filesystem::path& path);

// Phase-space point beta = x + i p; W is normalised so that int W dx dp = Tr rho.
struct WignerWindow {
    double x_min = -6.0, x_max = 6.0, p_min = -6.0, p_max = 6.0;
    int nx = 121, np = 121;

    static WignerWindow around(cplx alpha, int resolution = 121);
    double dx() const { return (x_max - x_min) / (nx - 1); }
    double dp() const { return (p_max - p_min) / (np - 1); }
    double x(int i) const { return x_min + i * dx(); }
    double p(int j) const { return p_min + j * dp(); }
};

struct WignerGrid {
    WignerWindow window;
    int mode = 0;
    Eigen::MatrixXd W;        // W(i, j) at (x_i, p_j)
    double boundary_max = 0.0;
    bool boundary_warning = false;

    double integral() const;  // trapezoidal quadrature over the window
};

// Boundary values above this fraction of max|W| raise the window warning.
inline constexpr double kWignerBoundaryFraction = 1e-3;

// W(beta) = (2/pi) Tr[rho D(beta) P D(-beta)], P the photon-number parity.
WignerGrid wigner_grid(const CMat& rho, const WignerWindow& window = {}, int mode = 0);
double wigner_point(const CMat& rho, cplx beta);

double negativity_volume(const WignerGrid& w);

void save_wigner_csv(const std::filesystem::path& path, const WignerGrid& w);

double mean_photon(const fock::DensOp& rho, int mode);
double mean_photon(const fock::Ket& psi, int mode);
// |alpha|^2 tanh(|alpha|^2), the even-cat photon number.
double cat_mean_photon(cplx alpha);

// (1/2) || a - b ||_1 for Hermitian matrices.
double trace_distance(const CMat& a, const CMat& b);
double trace_norm(const CMat& hermitian);
double purity(const CMat& rho);

} // namespace cradle::obs
