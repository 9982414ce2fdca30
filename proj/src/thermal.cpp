#include "cradle/thermal.hpp"

#include <algorithm>
#include <cmath>

namespace cradle::thermal {

std::size_t three_time_bytes(std::size_t steps) {
    const std::size_t s = steps + 1;
    return 2 * s * s * s * sizeof(cplx);
}

namespace {

double max_abs(const CVec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

void guard(double value, double limit, const char* what, std::size_t step) {
    if (!std::isfinite(value) || value > limit)
        throw NumericalError(std::string("thermal ") + what + " exceeded the overflow guard", static_cast<long>(step));
}

} // namespace

ThermalCoeffGrids solve_thermal_coeffs(const fock::SystemSpec& spec, const env::ThermalKernelPair& kernels,
                                       double dt, double t_max, const ThermalOptions& opts) {
    spec.validate();
    if (!(dt > 0.0) || !(t_max >= 0.0)) throw std::invalid_argument("thermal solver needs dt > 0 and t_max >= 0");
    const auto steps = static_cast<std::size_t>(std::llround(t_max / dt));
    if (steps > opts.step_cap)
        throw ConfigError("thermal solver needs " + std::to_string(steps) + " steps, above the cap of " +
                          std::to_string(opts.step_cap) + "; the three-time grids would need " +
                          std::to_string(three_time_bytes(steps)) + " bytes");

    const auto k1 = env::tabulate(kernels.kernel1(), dt, steps + 1);
    const auto k2 = env::tabulate(kernels.kernel2(), dt, steps + 1);

    const int N = spec.num_modes();
    CVec l(N);
    Eigen::MatrixXd hop = Eigen::MatrixXd::Zero(N, N);
    for (int i = 0; i < N; ++i) {
        l(i) = spec.weights[static_cast<std::size_t>(i)];
        hop(i, i) = spec.omegas[static_cast<std::size_t>(i)];
        if (i + 1 < N) hop(i, i + 1) = hop(i + 1, i) = spec.lambdas[static_cast<std::size_t>(i)];
    }
    const CMat ih = kI * hop.cast<cplx>();
    const CMat eye = CMat::Identity(N, N);
    const cplx ll = l.dot(l);
    const double lmax = l.cwiseAbs().maxCoeff();
    const double half = 0.5 * dt;

    ThermalCoeffGrids g;
    g.dt = dt;
    g.steps = steps;
    g.num_modes = N;
    const std::size_t side = steps + 1;
    g.xp.assign(side * side * side, cplx{});
    g.yp.assign(side * side * side, cplx{});
    g.x.reserve(side);
    g.y.reserve(side);

    // t = 0: a single column with x = y = l; x'(0,0,0) takes the s' = t rule.
    CMat x = l, y = l;
    CMat xp(1, 1), yp(1, 1);
    xp(0, 0) = -ll;
    yp(0, 0) = ll;
    g.x.push_back(x);
    g.y.push_back(y);
    g.X.push_back(CVec::Zero(N));
    g.Y.push_back(CVec::Zero(N));
    g.Xp.push_back(CVec::Zero(1));
    g.Yp.push_back(CVec::Zero(1));
    g.xp[g.index(0, 0, 0)] = xp(0, 0);
    g.yp[g.index(0, 0, 0)] = yp(0, 0);

    auto weight = [&](std::size_t m, std::size_t last) { return (m == 0 || m == last) ? half : dt; };

    for (std::size_t n = 0; n < steps; ++n) {
        const std::size_t n1 = n + 1;
        const auto w_old = static_cast<Eigen::Index>(n1);
        const auto w_new = static_cast<Eigen::Index>(n1 + 1);
        const CVec &Xn = g.X[n], &Yn = g.Y[n], &Xpn = g.Xp[n], &Ypn = g.Yp[n];

        const CMat ex_x = eye + half * (ih + l * Yn.transpose() + Xn * l.transpose());
        const CMat ex_y = eye + half * (-ih - l * Xn.transpose() - Yn * l.transpose());
        // Explicit halves depend only on t_n data.
        CMat rx = ex_x * x - half * l * Ypn.head(w_old).transpose();
        CMat ry = ex_y * y - half * l * Xpn.head(w_old).transpose();
        const Eigen::RowVectorXcd lx_old = l.transpose() * x;
        const Eigen::RowVectorXcd ly_old = l.transpose() * y;

        CVec X = Xn, Y = Yn;
        CVec Xp(w_new), Yp(w_new);
        Xp.head(w_old) = Xpn;
        Yp.head(w_old) = Ypn;
        Xp(w_old) = Xpn(w_old - 1);
        Yp(w_old) = Ypn(w_old - 1);

        CMat x_new(N, w_new), y_new(N, w_new), xp_new(w_new, w_new), yp_new(w_new, w_new);
        int it = 0;
        for (;; ++it) {
            const CMat im_x = eye - half * (ih + l * Y.transpose() + X * l.transpose());
            const CMat im_y = eye - half * (-ih - l * X.transpose() - Y * l.transpose());
            x_new.leftCols(w_old) = im_x.partialPivLu().solve(rx - half * l * Yp.head(w_old).transpose());
            y_new.leftCols(w_old) = im_y.partialPivLu().solve(ry - half * l * Xp.head(w_old).transpose());
            x_new.col(w_old) = l;
            y_new.col(w_old) = l;
            const Eigen::RowVectorXcd lx = l.transpose() * x_new;
            const Eigen::RowVectorXcd ly = l.transpose() * y_new;

            // Rows m <= n advance in s'; column k = n+1 and row m = n+1 are boundaries.
            for (Eigen::Index m = 0; m < w_old; ++m) {
                for (Eigen::Index k = 0; k < w_old; ++k) {
                    xp_new(m, k) = xp(m, k) + half * (lx_old(m) * Xpn(k) + lx(m) * Xp(k));
                    yp_new(m, k) = yp(m, k) - half * (ly_old(m) * Ypn(k) + ly(m) * Yp(k));
                }
                xp_new(m, w_old) = -lx(m);
                yp_new(m, w_old) = ly(m);
            }
            xp_new.row(w_old).setZero();
            yp_new.row(w_old).setZero();
            xp_new(w_old, w_old) = -ll;
            yp_new(w_old, w_old) = ll;

            CVec X_next = CVec::Zero(N), Y_next = CVec::Zero(N);
            CVec Xp_next = CVec::Zero(w_new), Yp_next = CVec::Zero(w_new);
            for (std::size_t m = 0; m <= n1; ++m) {
                const double w = weight(m, n1);
                const cplx c1 = w * k1[n1 - m], c2 = w * k2[n1 - m];
                const auto mi = static_cast<Eigen::Index>(m);
                X_next.noalias() += c1 * x_new.col(mi);
                Y_next.noalias() += c2 * y_new.col(mi);
                Xp_next.noalias() += c1 * xp_new.row(mi).transpose();
                Yp_next.noalias() += c2 * yp_new.row(mi).transpose();
            }
            const double change = std::max({max_abs(X_next - X), max_abs(Y_next - Y), max_abs(Xp_next - Xp),
                                            max_abs(Yp_next - Yp)});
            const double scale = std::max({1.0, max_abs(X_next), max_abs(Y_next), max_abs(Xp_next),
                                           max_abs(Yp_next)});
            X = std::move(X_next);
            Y = std::move(Y_next);
            Xp = std::move(Xp_next);
            Yp = std::move(Yp_next);
            if (change <= opts.tolerance * scale) break;
            if (it + 1 >= opts.max_iterations)
                throw NumericalError("thermal corrector did not converge", static_cast<long>(n1));
        }

        guard(std::max(x_new.cwiseAbs().maxCoeff(), y_new.cwiseAbs().maxCoeff()), opts.overflow_guard, "x/y", n1);
        guard(std::max(xp_new.cwiseAbs().maxCoeff(), yp_new.cwiseAbs().maxCoeff()), opts.overflow_guard,
              "x'/y'", n1);

        // Thermal contributions to dx at t_{n+1}.
        for (Eigen::Index m = 0; m < w_new; ++m) {
            const cplx xy = x_new.col(m).cwiseProduct(Y).sum();
            g.max_xy_coupling = std::max(g.max_xy_coupling, std::abs(xy) * lmax);
            g.max_yprime_coupling = std::max(g.max_yprime_coupling, std::abs(Yp(m)) * lmax);
        }

        x = std::move(x_new);
        y = std::move(y_new);
        xp = std::move(xp_new);
        yp = std::move(yp_new);
        for (std::size_t m = 0; m <= n1; ++m)
            for (std::size_t k = 0; k <= n1; ++k) {
                g.xp[g.index(n1, m, k)] = xp(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
                g.yp[g.index(n1, m, k)] = yp(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
            }
        g.x.push_back(x);
        g.y.push_back(y);
        g.X.push_back(X);
        g.Y.push_back(Y);
        g.Xp.push_back(Xp);
        g.Yp.push_back(Yp);
    }
    return g;
}

} // namespace cradle::thermal
