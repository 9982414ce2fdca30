// env_kernel.hpp - environment correlation kernels and colored-noise sampling.
//
// Conventions. K(t,s) = sum_j |g_j|^2 exp(-i w_j (t-s)) is the bath correlation
// <B(t) B^dag(s)>. The trajectory equation is driven by conj(z_t) where z_t is a
// circular complex Gaussian process with M[z_t conj(z_s)] = K(t,s) and
// M[z_t] = M[z_t z_s] = 0. NoisePath stores z_t.

#pragma once

#include "cradle/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cradle::env {

struct LorentzSpec {
    double gamma_big = 1.0;  // global dissipation rate
    double gamma = 1.0;      // inverse memory time
    double delta = 0.0;      // central frequency of the spectrum

    double tau() const { return 1.0 / gamma; }
    void validate() const;
    // g(w) = (Gamma gamma^2 / 2pi) / ((w - Delta)^2 + gamma^2)
    double spectral_density(double omega) const;
};

enum class KernelKind { ou, markovian_delta, tabulated, thermal };

const char* to_string(KernelKind kind);

// A stationary correlation kernel, evaluated through its lag u = t - s.
class EnvKernel {
public:
    // Tabulated kernel on a uniform lag grid u_k = k * du, linearly interpolated.
    static EnvKernel tabulated(double du, std::vector<cplx> values, KernelKind kind = KernelKind::tabulated);
    // Tabulated kernel on an arbitrary increasing lag grid starting at 0.
    static EnvKernel tabulated(std::vector<double> lags, std::vector<cplx> values);

    KernelKind kind() const noexcept { return kind_; }
    bool is_delta() const noexcept { return kind_ == KernelKind::markovian_delta; }

    // Lorentzian parameters for OU kernels and the delta sentinel (gamma_big only).
    const LorentzSpec& lorentz() const;

    // K(u) for u >= 0; K(-u) = conj(K(u)).
    cplx operator()(double lag) const;
    cplx operator()(double t, double s) const { return (*this)(t - s); }

    // Largest lag covered by a tabulated kernel (infinity for closed forms).
    double max_lag() const noexcept;

private:
    friend EnvKernel ou_kernel(const LorentzSpec&);
    friend EnvKernel markovian_kernel(double);

    EnvKernel() = default;

    KernelKind kind_ = KernelKind::ou;
    LorentzSpec lorentz_{};
    bool has_lorentz_ = false;
    std::vector<double> lags_;
    std::vector<cplx> values_;
    double uniform_du_ = 0.0;
};

// K(u) = (Gamma gamma / 2) exp(-(gamma + i Delta) u)
EnvKernel ou_kernel(const LorentzSpec& spec);
// Delta-correlated sentinel K = Gamma delta(t - s). Never evaluated pointwise.
EnvKernel markovian_kernel(double gamma_big);

// Samples an arbitrary kernel onto n uniform lags (k * du).
std::vector<cplx> tabulate(const EnvKernel& kernel, double du, std::size_t n);

// Three columns with a header row: u, Re K, Im K.
EnvKernel load_kernel_csv(const std::filesystem::path& path);
void save_kernel_csv(const std::filesystem::path& path, const std::vector<double>& lags,
                     const std::vector<cplx>& values);

// Bose-Einstein occupation 1/(exp(beta w) - 1).
double bose_einstein(double omega, double beta);

struct QuadratureConfig {
    double omega_floor = 1e-2;   // lower integration limit (excludes the pole at 0)
    double omega_span = 20.0;    // upper limit is Delta + omega_span * gamma
    double rel_tol = 1e-8;
    int max_refinements = 16;
    int initial_panels = 1024;
};

struct ThermalKernelPair {
    double beta = 0.0;
    double du = 0.0;
    double omega_min = 0.0;
    double omega_max = 0.0;
    std::vector<cplx> k1;     // int g (n + 1) exp(-i w u) dw
    std::vector<cplx> k2;     // int g n exp(+i w u) dw
    std::vector<cplx> k_zero; // int g exp(-i w u) dw on the same quadrature (T = 0 reference)

    EnvKernel kernel1() const { return EnvKernel::tabulated(du, k1, KernelKind::thermal); }
    EnvKernel kernel2() const { return EnvKernel::tabulated(du, k2, KernelKind::thermal); }
    EnvKernel zero_temperature() const { return EnvKernel::tabulated(du, k_zero); }
};

// Lorentzian mass (in units of Gamma gamma / 2) outside [omega_min, omega_max]; bounds
// |K1(u) - K_OU(u)| at zero temperature.
double lorentz_tail_mass(const LorentzSpec& spec, double omega_min, double omega_max);

// Tabulates K1 and K2 on u_k = k * du, k < num_lags. Throws NumericalError when the
// adaptive trapezoid refinement cannot meet the tolerance.
ThermalKernelPair thermal_kernels(const LorentzSpec& spec, double beta, double du, std::size_t num_lags,
                                  const QuadratureConfig& quad = {});

struct NoisePath {
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<cplx> z;  // z at t_k = k * dt, k = 0..steps

    std::size_t num_steps() const noexcept { return z.empty() ? 0 : z.size() - 1; }
    cplx at(std::size_t k) const { return z.at(k); }
};

// Exact stationary AR(1) sampling of the OU process on a uniform grid.
NoisePath sample_ou_noise(const LorentzSpec& spec, double dt, std::size_t steps, std::uint64_t seed);

// Circulant-embedding sampling of a stationary Gaussian process with tabulated
// covariance c_k = K(k dt), k = 0..steps. Throws NumericalError naming the negative
// spectral fraction when the embedding is not nonnegative within `tolerance`.
NoisePath sample_noise_from_kernel(std::span<const cplx> covariance, double dt, std::uint64_t seed,
                                   double tolerance = 1e-8);
NoisePath sample_noise_from_kernel(const EnvKernel& kernel, double dt, std::size_t steps, std::uint64_t seed,
                                   double tolerance = 1e-8);

// Independent per-path seed derived from a master seed (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

} // namespace cradle::env
