#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "sacforge/common.hpp"
#include "sacforge/device.hpp"
#include "sacforge/rootfind.hpp"

namespace sacforge {

/// One margin node: N input banks of S splines each, per-element current
/// offsets, the constraint current c, an optional reference bank pinned to a
/// zero input (needed for the saturating proto-shape), and the device models.
struct SacNodeConfig {
    int n_inputs = 1;
    int n_splines = 1;
    std::vector<Real> offsets;  // n_inputs x n_splines, row-major
    Real c = 0.5;
    bool include_zero_bank = true;
    TransistorModel model;
    DiodeModel diode;

    static SacNodeConfig make(int n_inputs, int n_splines, std::vector<Real> offsets,
                              Real c, bool include_zero_bank,
                              const TransistorModel& model, const DiodeModel& diode) {
        if (n_inputs < 1 || n_splines < 1) {
            throw ParameterError("node needs n_inputs >= 1 and n_splines >= 1");
        }
        if (!(c > 0) || !std::isfinite(c)) {
            throw ParameterError("constraint current c must be positive and finite");
        }
        if (offsets.size() != static_cast<size_t>(n_inputs) * n_splines) {
            throw ParameterError("offsets must be an n_inputs x n_splines matrix");
        }
        for (Real o : offsets) {
            if (!std::isfinite(o)) throw ParameterError("offsets must be finite");
        }
        SacNodeConfig cfg;
        cfg.n_inputs = n_inputs;
        cfg.n_splines = n_splines;
        cfg.offsets = std::move(offsets);
        cfg.c = c;
        cfg.include_zero_bank = include_zero_bank;
        cfg.model = model;
        cfg.diode = diode;
        return cfg;
    }

    /// Single-input node with S spline offsets equally spaced over [-c, c]
    /// (midpoint 0 for S = 1) and the reference zero bank: the proto-shape
    /// building block. The companion diode defaults to the model's.
    static SacNodeConfig proto(int n_splines, Real c, const TransistorModel& model) {
        return proto(n_splines, c, model, default_diode(model));
    }
    static SacNodeConfig proto(int n_splines, Real c, const TransistorModel& model,
                               const DiodeModel& diode) {
        std::vector<Real> offs(static_cast<size_t>(std::max(n_splines, 1)));
        if (n_splines == 1) {
            offs[0] = 0.0;
        } else {
            for (int j = 0; j < n_splines; ++j) {
                offs[j] = -c + 2.0 * c * j / (n_splines - 1);
            }
        }
        return make(1, n_splines, std::move(offs), c, true, model, diode);
    }

    Real offset(int i, int j) const {
        return offsets[static_cast<size_t>(i) * n_splines + j];
    }
    /// Banks participating in the solve (inputs plus the optional zero bank,
    /// which reuses the offsets of input row 0).
    int bank_count() const { return n_inputs + (include_zero_bank ? 1 : 0); }
    int element_count() const { return bank_count() * n_splines; }

    /// Largest offset magnitude; the knee region spans roughly +-(knots + c).
    Real knots() const {
        Real k = 0;
        for (Real o : offsets) k = std::max(k, std::abs(o));
        return k;
    }
};

/// Per-element input currents after offsets: x[i][j] = inputs[i] + offsets[i][j].
struct InputMatrix {
    int n_inputs = 0;
    int n_splines = 0;
    std::vector<Real> x;  // row-major
};

inline InputMatrix apply_offsets(const SacNodeConfig& cfg, const std::vector<Real>& inputs) {
    if (inputs.size() != static_cast<size_t>(cfg.n_inputs)) {
        throw ParameterError("expected " + std::to_string(cfg.n_inputs) + " inputs, got " +
                             std::to_string(inputs.size()));
    }
    InputMatrix m;
    m.n_inputs = cfg.n_inputs;
    m.n_splines = cfg.n_splines;
    m.x.resize(inputs.size() * cfg.n_splines);
    for (int i = 0; i < cfg.n_inputs; ++i) {
        if (!std::isfinite(inputs[i])) throw ParameterError("inputs must be finite");
        for (int j = 0; j < cfg.n_splines; ++j) {
            m.x[static_cast<size_t>(i) * cfg.n_splines + j] = inputs[i] + cfg.offset(i, j);
        }
    }
    return m;
}

/// Solution of the node constraint system.
struct SolveResult {
    Real h = 0;     // output current (analytic rectifier: the raw margin, may be < 0)
    Real v_b = 0;   // common node voltage
    std::vector<Real> v_internal;  // per-element voltages, input banks (N x S)
    std::vector<Real> v_zero;      // per-element voltages of the zero bank (S), if present
    Real residual = 0;             // |sum of diode currents - c|
    int iterations = 0;
    bool railed = false;  // true: constraint unsatisfiable, returned the h -> 0 limit
    std::vector<Real> inputs;      // the solved-for inputs (for derivative fallbacks)
};

struct SolveOptions {
    std::optional<Real> vb_hint;   // initial iterate for the outer solve
    bool allow_railed = false;     // return the flagged h = 0 limit instead of throwing
    Real residual_tol = 1e-9;      // accepted |sum D - c| / c
    int max_iterations = 200;
};

/// Margin value z with sum_i max(x_i - z, 0) = c, by descending sort and
/// active-set scan; exact to rounding. The analytic limit of the node solve.
inline Real solve_rectifier_closed_form(const std::vector<Real>& inputs, Real c) {
    if (inputs.empty()) throw ParameterError("margin needs at least one input");
    if (!(c > 0) || !std::isfinite(c)) {
        throw ParameterError("constraint current c must be positive and finite");
    }
    std::vector<Real> s(inputs);
    for (Real v : s) {
        if (!std::isfinite(v)) throw ParameterError("inputs must be finite");
    }
    std::stable_sort(s.begin(), s.end(), std::greater<Real>());
    Real prefix = 0;
    for (size_t k = 1; k <= s.size(); ++k) {
        prefix += s[k - 1];
        const Real z = (prefix - c) / static_cast<Real>(k);
        if (k == s.size() || z >= s[k]) return z;
    }
    throw SolveError("active-set scan failed", c, 0);  // unreachable: k = M always valid
}

namespace detail {

struct ElementState {
    Real w = 0;      // V_e - v_b
    Real d = 0;      // diode current
    Real a = 0;      // transistor conductance F'(v_b - V_e)
    Real delta = 0;  // diode conductance D'(w)
    bool on = false;
};

/// Largest diode current one element can pass (v_b -> -inf limit): the root of
/// D(w) - F(-w) = x_e. Zero when the element never conducts; +inf for the
/// analytic rectifier.
inline Real element_supply_limit(const TransistorModel& m, const DiodeModel& dio, Real x_e) {
    if (m.law == TransistorLaw::IdealRectifier) {
        return std::numeric_limits<Real>::infinity();
    }
    const Real f0 = forward_current(m, 0.0);
    if (x_e <= -f0) return 0.0;
    const Real w_hi = inverse_diode(dio, std::max(x_e, 0.0) + f0 + 1.0);
    auto fdf = [&](Real w) {
        return std::pair<Real, Real>(diode_current(dio, w) - forward_current(m, -w) - x_e,
                                     diode_conductance(dio, w) + conductance(m, -w));
    };
    const Real f_lo = -f0 - x_e;  // value at w = 0
    const Real f_hi = fdf(w_hi).first;
    if (f_hi <= 0) return diode_current(dio, w_hi);  // rounding edge: cap at bracket end
    auto r = solve_increasing(fdf, 0.0, w_hi, f_lo, f_hi,
                              inverse_diode(dio, std::max(x_e, 1e-300)),
                              16 * std::numeric_limits<Real>::epsilon() *
                                  std::max({std::abs(x_e), f0, Real(1)}),
                              200);
    return diode_current(dio, r.x);
}

/// Solve the per-element relation h - F(-w) + D(w) = x_e for w = V_e - v_b at
/// fixed v_b. Diode-off elements have the closed form w = -F^{-1}(h - x_e).
/// d_cap bounds the diode current expected at the solution (the constraint
/// total); it only sharpens the seed, never the bracket.
inline ElementState solve_element(const TransistorModel& m, const DiodeModel& dio,
                                  Real x_e, Real h, Real f0, Real w_seed, Real d_cap) {
    ElementState e;
    const Real t_b = h - f0;  // largest input served with the diode off
    if (x_e <= t_b) {
        e.on = false;
        const Real dv = inverse_forward(m, h - x_e);  // v_b - V_e >= 0
        e.w = -dv;
        e.d = 0;
        e.a = conductance(m, dv);
        e.delta = 0;
        return e;
    }
    e.on = true;
    const Real target = x_e - t_b;
    const Real pad = std::max({Real(1), std::abs(x_e), target});
    const Real w_hi = inverse_diode(dio, target + pad);
    auto fdf = [&](Real w) {
        return std::pair<Real, Real>(
            h - forward_current(m, -w) + diode_current(dio, w) - x_e,
            conductance(m, -w) + diode_conductance(dio, w));
    };
    Real w0 = (w_seed > 0 && w_seed < w_hi)
                  ? w_seed
                  : inverse_diode(dio, std::min(target, std::max(d_cap, Real(0))));
    // Tolerance at the rounding floor of the residual evaluation, so the
    // per-element currents are as accurate as the representation allows.
    const Real f_tol = 16 * std::numeric_limits<Real>::epsilon() *
                       std::max({Real(1), std::abs(x_e), f0, std::abs(h)});
    auto r = solve_increasing(fdf, 0.0, w_hi, t_b - x_e, fdf(w_hi).first, w0, f_tol, 200);
    e.w = r.x;
    e.d = diode_current(dio, r.x);
    e.a = conductance(m, -r.x);
    e.delta = diode_conductance(dio, r.x);
    return e;
}

}  // namespace detail

/// Total diode current available at the railed limit for these inputs;
/// the constraint is satisfiable iff this exceeds c. +inf for the rectifier.
inline Real node_supply_limit(const SacNodeConfig& cfg, const std::vector<Real>& inputs) {
    const InputMatrix m = apply_offsets(cfg, inputs);
    Real total = 0;
    for (Real x_e : m.x) total += detail::element_supply_limit(cfg.model, cfg.diode, x_e);
    if (cfg.include_zero_bank) {
        for (int j = 0; j < cfg.n_splines; ++j) {
            total += detail::element_supply_limit(cfg.model, cfg.diode, cfg.offset(0, j));
        }
    }
    return total;
}

/// Solve the node: find v_b (and the per-element voltages) so every element
/// passes its input current and the diode currents sum to c. Output
/// h = F(v_b); the analytic rectifier continues h = v_b through zero.
inline SolveResult solve_node(const SacNodeConfig& cfg, const std::vector<Real>& inputs,
                              const SolveOptions& opts = {}) {
    const InputMatrix im = apply_offsets(cfg, inputs);
    const bool rect = cfg.model.law == TransistorLaw::IdealRectifier;

    // Flatten all participating elements: input banks then the zero bank.
    std::vector<Real> xs(im.x);
    if (cfg.include_zero_bank) {
        for (int j = 0; j < cfg.n_splines; ++j) xs.push_back(cfg.offset(0, j));
    }
    SolveResult out;
    out.inputs = inputs;

    // The analytic rectifier limit: diode current max(x_e - z, 0), output
    // h = z itself (identity map, may go negative); never rails.
    if (rect) {
        const Real z = solve_rectifier_closed_form(xs, cfg.c);
        // Polish through the generic monotone machinery so the iterative path
        // is exercised, seeded with the closed form (converges immediately).
        auto fdf = [&](Real v) {
            Real sum = 0;
            Real slope = 0;
            for (Real x_e : xs) {
                if (x_e > v) { sum += x_e - v; slope += 1; }
            }
            return std::pair<Real, Real>(cfg.c - sum, slope);
        };
        const Real span = cfg.knots() + std::abs(z) + cfg.c + 1.0;
        auto r = solve_increasing(fdf, z - span, z + span, fdf(z - span).first,
                                  fdf(z + span).first, opts.vb_hint.value_or(z),
                                  1e-12 * cfg.c, opts.max_iterations);
        out.v_b = r.x;
        out.h = r.x;
        out.iterations = r.iterations;
        out.residual = std::abs(r.f);
        if (out.residual > opts.residual_tol * cfg.c) {
            throw SolveError("rectifier margin solve missed tolerance", out.residual,
                             r.iterations);
        }
        out.v_internal.resize(static_cast<size_t>(cfg.n_inputs) * cfg.n_splines);
        for (size_t e = 0; e < out.v_internal.size(); ++e) {
            out.v_internal[e] = xs[e] > out.v_b ? xs[e] : out.v_b;
        }
        if (cfg.include_zero_bank) {
            out.v_zero.resize(cfg.n_splines);
            for (int j = 0; j < cfg.n_splines; ++j) {
                const Real x_e = xs[static_cast<size_t>(cfg.n_inputs) * cfg.n_splines + j];
                out.v_zero[j] = x_e > out.v_b ? x_e : out.v_b;
            }
        }
        return out;
    }

    const TransistorModel& mod = cfg.model;
    const DiodeModel& dio = cfg.diode;
    const Real f0 = forward_current(mod, 0.0);

    // Feasibility: total available diode current at the railed limit.
    Real supply = 0;
    for (Real x_e : xs) supply += detail::element_supply_limit(mod, dio, x_e);
    if (!(supply > cfg.c * (1 + 1e-12))) {
        if (!opts.allow_railed) {
            throw SolveError(
                "constraint current c = " + std::to_string(cfg.c) +
                    " exceeds the node's total available diode current " +
                    std::to_string(supply) + "; the node rails (h -> 0)",
                cfg.c - supply, 0);
        }
        out.railed = true;
        out.h = 0;
        out.v_b = -std::numeric_limits<Real>::infinity();
        out.residual = cfg.c - supply;
        out.v_internal.assign(static_cast<size_t>(cfg.n_inputs) * cfg.n_splines, out.v_b);
        if (cfg.include_zero_bank) out.v_zero.assign(cfg.n_splines, out.v_b);
        return out;
    }

    Real max_x = -std::numeric_limits<Real>::infinity();
    for (Real x_e : xs) max_x = std::max(max_x, x_e);

    std::vector<Real> warm(xs.size(), -1.0);
    auto total_at = [&](Real v_b, Real* slope_out,
                        std::vector<detail::ElementState>* states) {
        const Real h = forward_current(mod, v_b);
        const Real g_b = conductance(mod, v_b);
        Real sum = 0, asum = 0;
        for (size_t e = 0; e < xs.size(); ++e) {
            auto st = detail::solve_element(mod, dio, xs[e], h, f0, warm[e], cfg.c);
            warm[e] = st.on ? st.w : -1.0;
            sum += st.d;
            if (st.on) asum += st.delta / (st.a + st.delta);
            if (states) (*states)[e] = st;
        }
        if (slope_out) *slope_out = g_b * asum;  // -dR/dv_b where R = sum - c
        return sum;
    };

    // Bracket: above v_hi every diode is off (threshold exceeds every input);
    // below, expand geometrically until the supply side wins. The expansion is
    // capped where h underflows to the railed limit.
    const Real v_hi = inverse_forward(mod, f0 + std::max(max_x, Real(0)) + cfg.c + 1.0);
    const Real z_rect = solve_rectifier_closed_form(xs, cfg.c);
    Real v0;
    {
        const Real h_seed = std::max(z_rect + f0, std::min(f0, cfg.c) * 1e-9);
        v0 = std::min(inverse_forward(mod, h_seed), v_hi - 1e-9);
    }
    Real lo = v0, f_lo;
    Real step = std::max(mod.slope_factor * mod.thermal_voltage, 1e-3 * (1 + std::abs(v0)));
    int expansions = 0;
    for (;; ++expansions) {
        f_lo = cfg.c - total_at(lo, nullptr, nullptr);
        if (f_lo <= 0) break;  // supply side reached
        if (expansions > 120 || forward_current(mod, lo) < 1e-280) {
            // Beyond floating-point resolution: indistinguishable from railed.
            if (!opts.allow_railed) {
                throw SolveError("node solve could not bracket the constraint (supply " +
                                     std::to_string(supply) + " vs c = " +
                                     std::to_string(cfg.c) + ")",
                                 f_lo, expansions);
            }
            out.railed = true;
            out.h = 0;
            out.v_b = -std::numeric_limits<Real>::infinity();
            out.residual = f_lo;
            out.v_internal.assign(static_cast<size_t>(cfg.n_inputs) * cfg.n_splines, out.v_b);
            if (cfg.include_zero_bank) out.v_zero.assign(cfg.n_splines, out.v_b);
            return out;
        }
        lo -= step;
        step *= 2;
    }
    const Real f_hi = cfg.c - total_at(v_hi, nullptr, nullptr);

    auto fdf = [&](Real v_b) {
        Real slope;
        const Real sum = total_at(v_b, &slope, nullptr);
        return std::pair<Real, Real>(cfg.c - sum, slope);
    };
    Real x_start = opts.vb_hint.value_or(v0);
    if (!(x_start > lo && x_start < v_hi)) x_start = std::clamp(v0, lo, v_hi);
    auto r = solve_increasing(fdf, lo, v_hi, f_lo, f_hi, x_start,
                              1e-12 * cfg.c, opts.max_iterations);

    std::vector<detail::ElementState> states(xs.size());
    const Real total = total_at(r.x, nullptr, &states);
    out.v_b = r.x;
    out.h = forward_current(mod, r.x);
    out.iterations = r.iterations;
    out.residual = std::abs(total - cfg.c);
    if (out.residual > opts.residual_tol * cfg.c) {
        throw SolveError("node solve residual " + std::to_string(out.residual) +
                             " exceeds tolerance",
                         out.residual, r.iterations);
    }
    out.v_internal.resize(static_cast<size_t>(cfg.n_inputs) * cfg.n_splines);
    for (size_t e = 0; e < out.v_internal.size(); ++e) {
        out.v_internal[e] = out.v_b + states[e].w;
    }
    if (cfg.include_zero_bank) {
        out.v_zero.resize(cfg.n_splines);
        for (int j = 0; j < cfg.n_splines; ++j) {
            out.v_zero[j] =
                out.v_b + states[static_cast<size_t>(cfg.n_inputs) * cfg.n_splines + j].w;
        }
    }
    return out;
}

/// Per-input sensitivities of the output.
struct JacobianResult {
    std::vector<Real> dh_dx;  // one entry per input bank
    bool used_finite_differences = false;
};

/// dh/dx_i at a solution via implicit differentiation: each element
/// contributes A_e = D'/(F' + D'), and dh/dx_i = sum_j A_ij / sum_all A.
/// Falls back to central finite differences if the linearization degenerates.
inline JacobianResult jacobian(const SacNodeConfig& cfg, const SolveResult& sol) {
    JacobianResult jr;
    jr.dh_dx.assign(cfg.n_inputs, 0.0);
    if (sol.railed) return jr;  // output pinned at zero

    auto weight = [&](Real v_e) {
        const Real a = conductance(cfg.model, sol.v_b - v_e);
        const Real delta = diode_conductance(cfg.diode, v_e - sol.v_b);
        const Real s = a + delta;
        return s > 0 ? delta / s : 0.0;
    };
    Real asum = 0;
    for (int i = 0; i < cfg.n_inputs; ++i) {
        Real row = 0;
        for (int j = 0; j < cfg.n_splines; ++j) {
            row += weight(sol.v_internal[static_cast<size_t>(i) * cfg.n_splines + j]);
        }
        jr.dh_dx[i] = row;
        asum += row;
    }
    for (Real v_e : sol.v_zero) asum += weight(v_e);

    if (asum > 1e-300 && std::isfinite(asum)) {
        for (Real& v : jr.dh_dx) v /= asum;
        return jr;
    }

    // Degenerate linearization (all diode conductances ~ 0): finite differences.
    jr.used_finite_differences = true;
    SolveOptions o;
    o.allow_railed = true;
    for (int i = 0; i < cfg.n_inputs; ++i) {
        const Real step = 1e-6 * std::max(Real(1), std::abs(sol.inputs[i]));
        std::vector<Real> xp(sol.inputs), xm(sol.inputs);
        xp[i] += step;
        xm[i] -= step;
        jr.dh_dx[i] =
            (solve_node(cfg, xp, o).h - solve_node(cfg, xm, o).h) / (2 * step);
    }
    return jr;
}

/// The normalized saturating curve of a single-input node with the zero
/// reference bank: h(x) shifted so the configured window's low end reads 0.
/// Curves continue smoothly through the railed region (output 0).
class ProtoShape {
  public:
    explicit ProtoShape(SacNodeConfig cfg, std::optional<Real> x_ref = std::nullopt)
        : cfg_(std::move(cfg)) {
        if (cfg_.n_inputs != 1 || !cfg_.include_zero_bank) {
            throw ParameterError(
                "proto-shape needs a single input bank plus the zero reference bank");
        }
        x_ref_ = x_ref.value_or(default_x_ref(cfg_));
        h_ref_ = raw(x_ref_);
    }

    static Real default_x_ref(const SacNodeConfig& cfg) {
        return -(cfg.knots() + 10.0 * cfg.c);
    }

    /// Un-normalized output h(x).
    Real raw(Real x) const {
        SolveOptions o;
        o.allow_railed = true;
        return solve_node(cfg_, {x}, o).h;
    }

    /// Normalized output; nondecreasing, slope within [0, 1], left tail -> 0.
    Real operator()(Real x) const { return raw(x) - h_ref_; }

    /// Slope via implicit differentiation at the solution.
    Real derivative(Real x) const {
        SolveOptions o;
        o.allow_railed = true;
        const SolveResult s = solve_node(cfg_, {x}, o);
        return jacobian(cfg_, s).dh_dx[0];
    }

    Real x_ref() const { return x_ref_; }
    Real reference() const { return h_ref_; }
    const SacNodeConfig& config() const { return cfg_; }

  private:
    SacNodeConfig cfg_;
    Real x_ref_ = 0;
    Real h_ref_ = 0;
};

/// One-shot evaluation of the normalized proto-shape with the default window.
inline Real proto_shape(Real x, const SacNodeConfig& cfg) {
    return ProtoShape(cfg)(x);
}

/// One term of a composed shape: weight * base_shape(+-(x - x_shift)) + y_shift.
/// reflect evaluates the base at the mirrored argument (rotation of the curve),
/// independent of the weight's sign.
struct ShapeTerm {
    Real weight = 1.0;
    Real x_shift = 0.0;
    Real y_shift = 0.0;
    bool reflect = false;
    SacNodeConfig base;
};

/// Lazily evaluated sum of translated/reflected/scaled proto-shapes.
inline std::function<Real(Real)> compose_shape(const std::vector<ShapeTerm>& terms) {
    if (terms.empty()) throw ParameterError("compose_shape needs at least one term");
    struct Prepared {
        Real weight, x_shift, y_shift;
        bool reflect;
        ProtoShape shape;
    };
    auto prepared = std::make_shared<std::vector<Prepared>>();
    prepared->reserve(terms.size());
    for (const ShapeTerm& t : terms) {
        prepared->push_back({t.weight, t.x_shift, t.y_shift, t.reflect, ProtoShape(t.base)});
    }
    return [prepared](Real x) {
        Real y = 0;
        for (const Prepared& p : *prepared) {
            const Real arg = p.reflect ? -(x - p.x_shift) : (x - p.x_shift);
            y += p.weight * p.shape(arg) + p.y_shift;
        }
        return y;
    };
}

/// Uniform samples of the normalized proto-shape, normalized to the sweep's
/// own window (curve reads 0 at x_min). Fixed ascending sample order.
inline std::vector<std::pair<Real, Real>> sweep(const SacNodeConfig& cfg, Real x_min,
                                                Real x_max, int n_points) {
    if (!(x_min < x_max)) throw ParameterError("sweep needs x_min < x_max");
    if (n_points < 2) throw ParameterError("sweep needs at least 2 points");
    ProtoShape shape(cfg, x_min);
    std::vector<std::pair<Real, Real>> curve;
    curve.reserve(n_points);
    for (int k = 0; k < n_points; ++k) {
        const Real x = x_min + (x_max - x_min) * k / (n_points - 1);
        curve.emplace_back(x, shape(x));
    }
    return curve;
}

}  // namespace sacforge
