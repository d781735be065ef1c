#pragma once
// Small derivative-free minimizer (Nelder-Mead simplex) used for offset
// fitting and other low-dimensional calibration problems. Deterministic:
// the trajectory depends only on the initial point and step sizes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "common.hpp"

namespace sacforge {

struct SimplexOptions {
    int max_iterations = 2000;
    Real f_tol_rel = 1e-10;   // stop when simplex f-spread shrinks below this, relative
    Real x_tol_abs = 1e-12;   // or when the simplex collapses geometrically
};

struct SimplexResult {
    std::vector<Real> x;
    Real fval = 0;
    int iterations = 0;
    bool converged = false;
};

// Minimizes f over R^n starting from x0; `steps` sets the initial simplex
// edge length per coordinate (a single value is broadcast by the caller).
inline SimplexResult nelder_mead(const std::function<Real(const std::vector<Real>&)>& f,
                                 std::vector<Real> x0, const std::vector<Real>& steps,
                                 const SimplexOptions& opts = {}) {
    const std::size_t n = x0.size();
    if (n == 0 || steps.size() != n)
        throw ParameterError("nelder_mead: dimension mismatch between x0 and steps");

    constexpr Real alpha = 1.0;  // reflection
    constexpr Real gamma = 2.0;  // expansion
    constexpr Real rho = 0.5;    // contraction
    constexpr Real sigma = 0.5;  // shrink

    std::vector<std::vector<Real>> pts(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += steps[i];
    std::vector<Real> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(pts[i]);

    std::vector<std::size_t> order(n + 1);
    SimplexResult res;
    int it = 0;
    for (; it < opts.max_iterations; ++it) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order[0], worst = order[n], second = order[n - 1];

        const Real f_spread = std::abs(fv[worst] - fv[best]);
        Real x_spread = 0;
        for (std::size_t i = 0; i < n; ++i)
            x_spread = std::max(x_spread, std::abs(pts[worst][i] - pts[best][i]));
        if (f_spread <= opts.f_tol_rel * (std::abs(fv[best]) + 1e-30) ||
            x_spread <= opts.x_tol_abs) {
            res.converged = true;
            break;
        }

        std::vector<Real> centroid(n, 0.0);
        for (std::size_t k = 0; k <= n; ++k) {
            if (k == worst) continue;
            for (std::size_t i = 0; i < n; ++i) centroid[i] += pts[k][i];
        }
        for (std::size_t i = 0; i < n; ++i) centroid[i] /= static_cast<Real>(n);

        auto blend = [&](Real t) {
            std::vector<Real> p(n);
            for (std::size_t i = 0; i < n; ++i)
                p[i] = centroid[i] + t * (pts[worst][i] - centroid[i]);
            return p;
        };

        std::vector<Real> xr = blend(-alpha);
        const Real fr = f(xr);
        if (fr < fv[order[0]]) {
            std::vector<Real> xe = blend(-alpha * gamma);
            const Real fe = f(xe);
            if (fe < fr) {
                pts[worst] = std::move(xe);
                fv[worst] = fe;
            } else {
                pts[worst] = std::move(xr);
                fv[worst] = fr;
            }
        } else if (fr < fv[second]) {
            pts[worst] = std::move(xr);
            fv[worst] = fr;
        } else {
            const bool outside = fr < fv[worst];
            std::vector<Real> xc = blend(outside ? -rho : rho);
            const Real fc = f(xc);
            if (fc < std::min(fr, fv[worst])) {
                pts[worst] = std::move(xc);
                fv[worst] = fc;
            } else {
                for (std::size_t k = 0; k <= n; ++k) {
                    if (k == best) continue;
                    for (std::size_t i = 0; i < n; ++i)
                        pts[k][i] = pts[best][i] + sigma * (pts[k][i] - pts[best][i]);
                    fv[k] = f(pts[k]);
                }
            }
        }
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    res.x = pts[order[0]];
    res.fval = fv[order[0]];
    res.iterations = it;
    return res;
}

}  // namespace sacforge
