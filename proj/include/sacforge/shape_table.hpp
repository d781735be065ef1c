#pragma once

#include <cmath>
#include <vector>

#include "sacforge/common.hpp"
#include "sacforge/gmp.hpp"

namespace sacforge {

/// Dense cubic-Hermite tabulation of a node's normalized saturating curve,
/// for inner loops that evaluate the same node millions of times (network
/// training). Grid values come from the node solver; grid slopes come from
/// implicit differentiation at each solution. Outside the tabulated window
/// the curve continues linearly with the end slopes (the saturated tails).
///
/// derivative() is the analytic derivative of the interpolated polynomial,
/// so finite differences of operator() agree with derivative() to truncation
/// error -- the property gradient checks rely on.
class TabulatedShape {
  public:
    explicit TabulatedShape(const SacNodeConfig& cfg, int n_intervals = 8192)
        : cfg_(cfg) {
        if (n_intervals < 8) throw ParameterError("shape table needs >= 8 intervals");
        const Real half = cfg.knots() + 10.0 * cfg.c;
        x_lo_ = -half;
        dx_ = 2.0 * half / n_intervals;
        inv_dx_ = 1.0 / dx_;

        ProtoShape shape(cfg);
        SolveOptions opts;
        opts.allow_railed = true;
        const size_t n = static_cast<size_t>(n_intervals) + 1;
        y_.resize(n);
        m_.resize(n);
        for (size_t k = 0; k < n; ++k) {
            const Real x = x_lo_ + dx_ * static_cast<Real>(k);
            const SolveResult sol = solve_node(cfg_, {x}, opts);
            y_[k] = sol.h - shape.reference();
            m_[k] = jacobian(cfg_, sol).dh_dx[0];
        }
    }

    Real operator()(Real x) const {
        const Real s = (x - x_lo_) * inv_dx_;
        if (s <= 0.0) return y_.front() + m_.front() * (x - x_lo_);
        if (s >= static_cast<Real>(y_.size() - 1)) {
            const Real x_hi = x_lo_ + dx_ * static_cast<Real>(y_.size() - 1);
            return y_.back() + m_.back() * (x - x_hi);
        }
        const size_t i = static_cast<size_t>(s);
        const Real t = s - static_cast<Real>(i);
        const Real t2 = t * t, t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * dx_ * m_[i] +
               (-2 * t3 + 3 * t2) * y_[i + 1] + (t3 - t2) * dx_ * m_[i + 1];
    }

    Real derivative(Real x) const {
        const Real s = (x - x_lo_) * inv_dx_;
        if (s <= 0.0) return m_.front();
        if (s >= static_cast<Real>(y_.size() - 1)) return m_.back();
        const size_t i = static_cast<size_t>(s);
        const Real t = s - static_cast<Real>(i);
        const Real t2 = t * t;
        return ((6 * t2 - 6 * t) * y_[i] + (3 * t2 - 4 * t + 1) * dx_ * m_[i] +
                (-6 * t2 + 6 * t) * y_[i + 1] + (3 * t2 - 2 * t) * dx_ * m_[i + 1]) *
               inv_dx_;
    }

    Real x_lo() const { return x_lo_; }
    Real x_hi() const { return x_lo_ + dx_ * static_cast<Real>(y_.size() - 1); }
    const SacNodeConfig& config() const { return cfg_; }

  private:
    SacNodeConfig cfg_;
    Real x_lo_ = 0, dx_ = 0, inv_dx_ = 0;
    std::vector<Real> y_, m_;
};

}  // namespace sacforge
