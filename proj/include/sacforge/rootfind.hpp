#pragma once

#include <cmath>
#include <limits>
#include <utility>

#include "sacforge/common.hpp"

namespace sacforge {

struct RootResult {
    Real x = 0;
    Real f = 0;
    int iterations = 0;
};

/// Safeguarded Newton on a nondecreasing function with a validated bracket:
/// requires f(lo) <= 0 <= f(hi). Newton steps that leave the bracket (or fail
/// to shrink |f|) fall back to bisection, so progress is guaranteed. Returns
/// the best iterate found; the caller checks the residual against its own
/// contract. fdf(x) must return {f(x), f'(x)}.
template <class FDF>
RootResult solve_increasing(FDF&& fdf, Real lo, Real hi, Real flo, Real fhi,
                            Real x0, Real f_tol, int max_iter = 200) {
    if (flo > 0 || fhi < 0) {
        throw SolveError("root bracket does not straddle zero", std::min(std::abs(flo), std::abs(fhi)), 0);
    }
    if (flo == 0) return {lo, 0, 0};
    if (fhi == 0) return {hi, 0, 0};

    Real x = (x0 > lo && x0 < hi) ? x0 : 0.5 * (lo + hi);
    Real best_x = x, best_f = INFINITY;
    for (int it = 1; it <= max_iter; ++it) {
        auto [f, df] = fdf(x);
        if (std::abs(f) < std::abs(best_f)) { best_x = x; best_f = f; }
        if (std::abs(f) <= f_tol) return {x, f, it};
        if (f < 0) lo = x; else hi = x;
        Real next;
        if (df > 0 && std::isfinite(df)) {
            next = x - f / df;
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        } else {
            next = 0.5 * (lo + hi);
        }
        // Bracket collapsed to floating-point resolution: no better x exists.
        if (next == x || next == lo || next == hi) {
            if (hi - lo <= 4 * std::numeric_limits<Real>::epsilon() *
                               (std::abs(lo) + std::abs(hi) + 1e-300)) {
                return {best_x, best_f, it};
            }
            next = std::nextafter(next, next > x ? hi : lo);
            if (next <= lo || next >= hi) return {best_x, best_f, it};
        }
        x = next;
    }
    return {best_x, best_f, max_iter};
}

}  // namespace sacforge
