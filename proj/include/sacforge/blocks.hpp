#pragma once
// Compute blocks built on the constraint-node core: differential signaling,
// a compressive log-binary DAC with generic-base rebase, reference log
// curves, a four-quadrant multiplier with gain calibration, soft-ReLU, and
// MAC summation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "device.hpp"
#include "gmp.hpp"
#include "optimize.hpp"

namespace sacforge {

// ---------------------------------------------------------------------------
// Differential signaling
// ---------------------------------------------------------------------------

/// A signed quantity carried on two nonnegative rails around a common bias.
struct DifferentialSignal {
    Real plus = 0.0;
    Real minus = 0.0;
    Real value() const { return plus - minus; }
};

/// Split a signed value symmetrically around `bias` so both rails stay >= 0.
inline DifferentialSignal to_differential(Real value, Real bias) {
    if (!(bias > 0) || !std::isfinite(bias)) {
        throw ParameterError("differential bias must be positive and finite");
    }
    if (!std::isfinite(value) || std::abs(value) > 2.0 * bias) {
        throw RangeError("differential value exceeds the +-2*bias window");
    }
    return DifferentialSignal{bias + value / 2.0, bias - value / 2.0};
}

// ---------------------------------------------------------------------------
// Compressive log-binary DAC
// ---------------------------------------------------------------------------

/// Configuration of the compressive DAC: per-bit element offsets C[i][j]
/// (row-major n_bits x n_splines), the log base the output represents, and a
/// template node carrying the device law, companion diode, and constraint
/// current used for every code evaluation.
struct DacConfig {
    int n_bits = 8;
    int n_splines = 1;
    std::vector<Real> offsets;  // n_bits x n_splines, row-major
    Real base = 2.0;
    SacNodeConfig node;

    static DacConfig make(int n_bits, int n_splines, std::vector<Real> offsets,
                          const SacNodeConfig& node, Real base = 2.0) {
        if (n_bits < 1 || n_bits > 24) {
            throw ParameterError("DAC needs 1..24 bits");
        }
        if (n_splines < 1) throw ParameterError("DAC needs n_splines >= 1");
        if (offsets.size() != static_cast<size_t>(n_bits) * n_splines) {
            throw ParameterError("DAC offsets must be an n_bits x n_splines matrix");
        }
        for (Real o : offsets) {
            if (!std::isfinite(o)) throw ParameterError("DAC offsets must be finite");
        }
        if (!(base > 1.0) || !std::isfinite(base)) {
            throw ParameterError("DAC base must be > 1");
        }
        DacConfig cfg;
        cfg.n_bits = n_bits;
        cfg.n_splines = n_splines;
        cfg.offsets = std::move(offsets);
        cfg.base = base;
        cfg.node = node;
        return cfg;
    }

    Real offset(int i, int j) const {
        return offsets[static_cast<size_t>(i) * n_splines + j];
    }

    /// Input level applied to every enabled element. Chosen so the rectifier
    /// margin of the first bit row alone reads 2.0: keeps all element currents
    /// well above the smooth laws' clipping region. The output normalization
    /// cancels this shift exactly (the margin is translation-equivariant).
    Real pedestal() const {
        std::vector<Real> row0(offsets.begin(), offsets.begin() + n_splines);
        return 2.0 - solve_rectifier_closed_form(row0, node.c);
    }

    /// Level of the always-on anchor bank: far enough below the lowest
    /// enabled element that it only fixes the all-zeros floor, close enough
    /// that the node never rails.
    Real anchor() const {
        Real lo = offsets[0];
        for (int j = 1; j < n_splines; ++j) lo = std::min(lo, offset(0, j));
        return pedestal() + lo - 3.0;
    }
};

/// LSB-first bit vector for a code.
inline std::vector<std::uint8_t> code_bits(unsigned long code, int n_bits) {
    std::vector<std::uint8_t> bits(static_cast<size_t>(n_bits));
    for (int i = 0; i < n_bits; ++i) bits[i] = (code >> i) & 1u;
    return bits;
}

namespace detail {

/// Node for one code: anchor bank (always on) plus one bank per set bit,
/// every input driven by zero current, levels carried entirely as offsets.
inline SacNodeConfig dac_code_config(const DacConfig& cfg,
                                     const std::vector<std::uint8_t>& bits) {
    const Real ped = cfg.pedestal();
    const Real anchor = cfg.anchor();
    std::vector<Real> offs;
    offs.reserve(static_cast<size_t>(cfg.n_splines) * (cfg.n_bits + 1));
    for (int j = 0; j < cfg.n_splines; ++j) offs.push_back(anchor);
    int banks = 1;
    for (int i = 0; i < cfg.n_bits; ++i) {
        if (!bits[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < cfg.n_splines; ++j) offs.push_back(ped + cfg.offset(i, j));
        ++banks;
    }
    return SacNodeConfig::make(banks, cfg.n_splines, std::move(offs), cfg.node.c,
                               false, cfg.node.model, cfg.node.diode);
}

/// Deterministic code set used for fitting and sweeping: every code when the
/// space is small, otherwise ~256 codes per octave (always includes 1 and the
/// full-scale code).
inline std::vector<unsigned long> dac_code_set(int n_bits) {
    const unsigned long max_code = (1ul << n_bits) - 1ul;
    std::vector<unsigned long> codes;
    if (n_bits <= 12) {
        codes.reserve(max_code);
        for (unsigned long b = 1; b <= max_code; ++b) codes.push_back(b);
        return codes;
    }
    for (int o = 0; o < n_bits; ++o) {
        const unsigned long lo = 1ul << o;
        const unsigned long hi = std::min((1ul << (o + 1)) - 1ul, max_code);
        const unsigned long span = hi - lo;
        for (int k = 0; k < 256; ++k) {
            codes.push_back(lo + span * static_cast<unsigned long>(k) / 255ul);
        }
    }
    std::sort(codes.begin(), codes.end());
    codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
    return codes;
}

}  // namespace detail

/// Raw node output for one code word (LSB-first bit vector). The all-zeros
/// code returns the anchor bank's floor level; no code ever rails the node.
inline Real dac_convert(const std::vector<std::uint8_t>& bits, const DacConfig& cfg) {
    if (bits.size() != static_cast<size_t>(cfg.n_bits)) {
        throw ParameterError("bit vector length does not match the DAC width");
    }
    const SacNodeConfig node = detail::dac_code_config(cfg, bits);
    SolveOptions opts;
    opts.allow_railed = true;
    const std::vector<Real> inputs(static_cast<size_t>(node.n_inputs), 0.0);
    return solve_node(node, inputs, opts).h;
}

/// Normalized transfer curve over the DAC's deterministic code set:
/// m(B) = (h(B) - h(1)) / (h(max) - h(1)).
struct DacCurve {
    std::vector<unsigned long> codes;
    std::vector<Real> normalized;
    Real raw_lo = 0.0;   // h at code 1
    Real raw_hi = 0.0;   // h at the full-scale code
    Real floor_output = 0.0;  // h at code 0
};

inline DacCurve dac_curve(const DacConfig& cfg) {
    DacCurve out;
    out.codes = detail::dac_code_set(cfg.n_bits);
    out.normalized.resize(out.codes.size());
    std::vector<Real> raw(out.codes.size());
    for (size_t k = 0; k < out.codes.size(); ++k) {
        raw[k] = dac_convert(code_bits(out.codes[k], cfg.n_bits), cfg);
    }
    out.floor_output = dac_convert(code_bits(0, cfg.n_bits), cfg);
    out.raw_lo = raw.front();
    out.raw_hi = raw.back();
    const Real span = out.raw_hi - out.raw_lo;
    for (size_t k = 0; k < out.codes.size(); ++k) {
        out.normalized[k] = (raw[k] - out.raw_lo) / span;
    }
    return out;
}

namespace detail {

/// Exact weight-partition projection: delta_j = u_j - log2(sum_k 2^{u_k}),
/// so sum_j 2^{delta_j} = 1 to rounding.
inline std::vector<Real> project_partition(const std::vector<Real>& u) {
    Real hi = u[0];
    for (Real v : u) hi = std::max(hi, v);
    Real sum = 0;
    for (Real v : u) sum += std::exp2(v - hi);
    const Real shift = hi + std::log2(sum);
    std::vector<Real> delta(u.size());
    for (size_t j = 0; j < u.size(); ++j) delta[j] = u[j] - shift;
    return delta;
}

/// Max deviation between the normalized DAC sweep and the normalized log2
/// curve, plus the largest monotonicity down-step, for one delta vector.
struct DacFitEval {
    Real max_dev = 0.0;
    Real max_down_step = 0.0;
};

template <typename Eval>
DacFitEval dac_fit_eval(const std::vector<unsigned long>& codes, Eval&& raw_output) {
    const Real log_max = std::log2(static_cast<Real>(codes.back()));
    std::vector<Real> raw(codes.size());
    for (size_t k = 0; k < codes.size(); ++k) raw[k] = raw_output(codes[k]);
    const Real lo = raw.front(), span = raw.back() - raw.front();
    DacFitEval ev;
    if (!(span > 0) || !std::isfinite(span)) {
        ev.max_dev = 1.0;
        return ev;
    }
    for (size_t k = 0; k < codes.size(); ++k) {
        const Real m = (raw[k] - lo) / span;
        const Real ideal = std::log2(static_cast<Real>(codes[k])) / log_max;
        ev.max_dev = std::max(ev.max_dev, std::abs(m - ideal));
        if (k > 0) {
            ev.max_down_step = std::max(ev.max_down_step, (raw[k - 1] - raw[k]) / span);
        }
    }
    return ev;
}

}  // namespace detail

/// Fit the per-bit offsets C[i][j] = (i-1) + delta_j, with the shared deltas
/// constrained to an exact binary weight partition (sum_j 2^{delta_j} = 1).
/// Deterministic: fixed initialization, derivative-free minimax refinement
/// under the rectifier law first (cheap closed form), then under the node's
/// own law. Throws CalibrationError if the deviation stays above 20% of full
/// scale.
inline std::vector<Real> dac_fit_offsets(int n_bits, int n_splines,
                                         const SacNodeConfig& node) {
    if (n_bits < 1 || n_bits > 24) throw ParameterError("DAC needs 1..24 bits");
    if (n_splines < 1) throw ParameterError("DAC needs n_splines >= 1");

    const std::vector<unsigned long> codes = detail::dac_code_set(n_bits);

    auto offsets_from = [&](const std::vector<Real>& delta) {
        std::vector<Real> offs(static_cast<size_t>(n_bits) * n_splines);
        for (int i = 0; i < n_bits; ++i) {
            for (int j = 0; j < n_splines; ++j) {
                offs[static_cast<size_t>(i) * n_splines + j] =
                    static_cast<Real>(i) + delta[static_cast<size_t>(j)];
            }
        }
        return offs;
    };

    // Rectifier margin of a code: closed form, no node solve.
    auto rect_objective = [&](const std::vector<Real>& u) {
        const std::vector<Real> delta = detail::project_partition(u);
        auto raw = [&](unsigned long code) {
            std::vector<Real> els;
            els.reserve(static_cast<size_t>(n_splines) * (n_bits + 1));
            Real lo = delta[0];
            for (Real d : delta) lo = std::min(lo, d);
            els.insert(els.end(), static_cast<size_t>(n_splines), lo - 3.0);
            for (int i = 0; i < n_bits; ++i) {
                if (!((code >> i) & 1ul)) continue;
                for (int j = 0; j < n_splines; ++j) {
                    els.push_back(static_cast<Real>(i) + delta[static_cast<size_t>(j)]);
                }
            }
            return solve_rectifier_closed_form(els, node.c);
        };
        const detail::DacFitEval ev = detail::dac_fit_eval(codes, raw);
        return ev.max_dev + 50.0 * std::max(Real(0), ev.max_down_step - 1e-3);
    };

    auto law_objective = [&](const std::vector<Real>& u) {
        const std::vector<Real> delta = detail::project_partition(u);
        DacConfig cfg = DacConfig::make(n_bits, n_splines, offsets_from(delta), node);
        auto raw = [&](unsigned long code) {
            return dac_convert(code_bits(code, n_bits), cfg);
        };
        const detail::DacFitEval ev = detail::dac_fit_eval(codes, raw);
        return ev.max_dev + 50.0 * std::max(Real(0), ev.max_down_step - 1e-3);
    };

    // Fixed starting point: one octave of spread per spline, then projected.
    std::vector<Real> u(static_cast<size_t>(n_splines));
    for (int j = 0; j < n_splines; ++j) u[static_cast<size_t>(j)] = static_cast<Real>(j);

    const bool is_rect = node.model.law == TransistorLaw::IdealRectifier;
    SimplexOptions stage1;
    stage1.max_iterations = 500;
    stage1.f_tol_rel = 1e-7;
    SimplexResult r1 = nelder_mead(rect_objective, u,
                                   std::vector<Real>(u.size(), 0.6), stage1);
    std::vector<Real> best = r1.x;
    if (!is_rect) {
        SimplexOptions stage2;
        stage2.max_iterations = 250;
        stage2.f_tol_rel = 1e-6;
        SimplexResult r2 = nelder_mead(law_objective, best,
                                       std::vector<Real>(best.size(), 0.08), stage2);
        best = r2.x;
    }

    const std::vector<Real> delta = detail::project_partition(best);
    std::vector<Real> offs = offsets_from(delta);

    // Final acceptance under the node's own law, without the penalty term.
    DacConfig cfg = DacConfig::make(n_bits, n_splines, offs, node);
    const detail::DacFitEval ev = detail::dac_fit_eval(
        codes,
        [&](unsigned long code) { return dac_convert(code_bits(code, n_bits), cfg); });
    if (!(ev.max_dev <= 0.20)) {
        throw CalibrationError(
            "DAC offset fit stalled at " + std::to_string(100.0 * ev.max_dev) +
            "% of full scale (n_bits=" + std::to_string(n_bits) +
            ", n_splines=" + std::to_string(n_splines) +
            ", c=" + std::to_string(node.c) + "); the node cannot express the "
            "log curve this tightly");
    }
    return offs;
}

/// Fit and assemble a DAC in one step.
inline DacConfig make_dac(int n_bits, int n_splines, const SacNodeConfig& node,
                          Real base = 2.0) {
    return DacConfig::make(n_bits, n_splines, dac_fit_offsets(n_bits, n_splines, node),
                           node, base);
}

/// Read a base-theta log value in base-2 units: value / log_theta(2), i.e.
/// value * log2(theta). Exact arithmetic, linear in `value`.
inline Real dac_rebase(Real value, Real theta) {
    if (!(theta > 1.0) || !std::isfinite(theta)) {
        throw ParameterError("rebase needs a base theta > 1");
    }
    return value * (std::log(theta) / std::log(2.0));
}

/// Normalized compressive log curves over a 16-octave window, code axis in
/// [0, 1]: the exact log2 curve and two float-style piecewise approximations
/// (8-bit exponent with 7-bit and 23-bit mantissa quantization).
struct ReferenceLogCurves {
    std::vector<Real> code;
    std::vector<Real> ideal;
    std::vector<Real> bfloat_style;
    std::vector<Real> ieee_style;
};

inline ReferenceLogCurves reference_log_curves(int n_points) {
    if (n_points < 2) throw ParameterError("reference curves need n_points >= 2");
    constexpr Real kOctaves = 16.0;
    auto float_style = [&](Real t, int mantissa_bits) {
        if (t <= std::exp2(-kOctaves)) return Real(0);
        int e = 0;
        const Real f = std::frexp(t, &e);  // t = f * 2^e, f in [0.5, 1)
        const Real exponent = static_cast<Real>(e - 1);
        const Real mantissa = 2.0 * f - 1.0;  // in [0, 1)
        const Real scale = std::exp2(static_cast<Real>(mantissa_bits));
        const Real q = std::floor(mantissa * scale) / scale;
        return std::clamp((exponent + kOctaves + q) / kOctaves, Real(0), Real(1));
    };
    ReferenceLogCurves out;
    out.code.resize(static_cast<size_t>(n_points));
    out.ideal.resize(static_cast<size_t>(n_points));
    out.bfloat_style.resize(static_cast<size_t>(n_points));
    out.ieee_style.resize(static_cast<size_t>(n_points));
    for (int k = 0; k < n_points; ++k) {
        const Real t = static_cast<Real>(k) / (n_points - 1);
        out.code[static_cast<size_t>(k)] = t;
        const Real ideal =
            t <= std::exp2(-kOctaves) ? 0.0 : 1.0 + std::log2(t) / kOctaves;
        out.ideal[static_cast<size_t>(k)] = std::clamp(ideal, Real(0), Real(1));
        out.bfloat_style[static_cast<size_t>(k)] = float_style(t, 7);
        out.ieee_style[static_cast<size_t>(k)] = float_style(t, 23);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Four-quadrant multiplier
// ---------------------------------------------------------------------------

/// Tabulated map from stored weight to effective (small-signal) weight, with
/// a monotone inverse for weight programming. Plateaus are legitimate
/// (quantized gains under hard-saturation laws); only a decrease is invalid.
struct GainMap {
    std::vector<Real> w;  // strictly ascending grid
    std::vector<Real> g;  // measured gains, nondecreasing

    bool empty() const { return w.empty(); }

    /// Least-squares scalar of the map through the origin.
    Real linear_gain() const {
        Real num = 0, den = 0;
        for (size_t i = 0; i < w.size(); ++i) {
            num += g[i] * w[i];
            den += w[i] * w[i];
        }
        return den > 0 ? num / den : 0.0;
    }

    /// Piecewise-linear interpolation, clamped at the grid ends.
    Real operator()(Real wq) const {
        if (empty()) throw CalibrationError("gain map is empty");
        if (wq <= w.front()) return g.front();
        if (wq >= w.back()) return g.back();
        size_t i = static_cast<size_t>(
            std::upper_bound(w.begin(), w.end(), wq) - w.begin() - 1);
        const Real t = (wq - w[i]) / (w[i + 1] - w[i]);
        return g[i] + t * (g[i + 1] - g[i]);
    }

    /// Gains closer than this are one programming level: measured plateaus
    /// carry probe noise (solver residual divided by the small-signal probe),
    /// so plateau detection cannot rely on exact equality.
    Real plateau_tolerance() const {
        const Real scale = std::max(std::abs(g.front()), std::abs(g.back()));
        return 1e-6 * std::max(scale, Real(1e-300));
    }

    /// Monotone inverse: targets on a plateau map to the plateau's midpoint;
    /// targets outside the measured range clamp to the end plateaus.
    Real inverse(Real target) const {
        if (empty()) throw CalibrationError("gain map is empty");
        const Real t = std::clamp(target, g.front(), g.back());
        const Real tol = plateau_tolerance();
        // Since g is nondecreasing, the indices within tol of t form one
        // contiguous run: the measured plateau. Map to its midpoint.
        size_t lo = g.size(), hi = 0;
        for (size_t i = 0; i < g.size(); ++i) {
            if (std::abs(g[i] - t) <= tol) {
                lo = std::min(lo, i);
                hi = i;
            }
        }
        if (lo < g.size()) return (w[lo] + w[hi]) / 2.0;
        // No plateau hit: t lies strictly inside a riser; interpolate.
        const size_t up = static_cast<size_t>(
            std::lower_bound(g.begin(), g.end(), t) - g.begin());
        if (up == 0) return w.front();
        if (up >= g.size()) return w.back();
        const Real span = g[up] - g[up - 1];
        const Real u = (t - g[up - 1]) / span;
        return w[up - 1] + u * (w[up] - w[up - 1]);
    }
};

/// Validate and assemble a gain map; throws CalibrationError on a decrease.
inline GainMap make_gain_map(std::vector<Real> w, std::vector<Real> g) {
    if (w.size() != g.size() || w.empty()) {
        throw ParameterError("gain map needs equal-length, non-empty tables");
    }
    for (size_t i = 0; i < w.size(); ++i) {
        if (!std::isfinite(w[i]) || !std::isfinite(g[i])) {
            throw ParameterError("gain map tables must be finite");
        }
        if (i > 0 && !(w[i] > w[i - 1])) {
            throw ParameterError("gain map weight grid must be strictly ascending");
        }
        if (i > 0 && g[i] < g[i - 1] - 1e-9) {
            throw CalibrationError("measured gain map decreases at w = " +
                                   std::to_string(w[i]) +
                                   "; the node is not in a usable operating region");
        }
    }
    GainMap m;
    m.w = std::move(w);
    m.g = std::move(g);
    return m;
}

/// Four-quadrant multiplier cell: a proto-shape node, the bias current that
/// keeps all four shape arguments positive over the declared input range, the
/// declared ranges themselves, and an optional calibrated gain map.
struct MultiplierConfig {
    SacNodeConfig node;
    Real bias_c = 1.0;
    Real x_range = 1.0;
    Real w_range = 0.65;
    bool scale_output = false;  // divide by the map's linear gain when set
    GainMap gain_map;
    std::shared_ptr<const ProtoShape> shape;  // evaluation cache
};

/// Build a multiplier cell and verify the bias keeps every shape argument
/// inside the node's solver window across the declared range.
inline MultiplierConfig make_multiplier(const SacNodeConfig& node, Real bias_c = 1.0,
                                        Real x_range = 1.0, Real w_range = 0.65) {
    if (!std::isfinite(bias_c)) throw ParameterError("multiplier bias must be finite");
    if (!(x_range > 0) || !(w_range > 0)) {
        throw ParameterError("multiplier ranges must be positive");
    }
    const Real window = node.knots() + 10.0 * node.c;
    const Real worst = std::abs(2.0 * bias_c) + w_range + x_range;
    if (worst > window) {
        throw ParameterError(
            "multiplier bias/range leaves the node's solver window: max argument " +
            std::to_string(worst) + " vs window " + std::to_string(window));
    }
    MultiplierConfig cfg;
    cfg.node = node;
    cfg.bias_c = bias_c;
    cfg.x_range = x_range;
    cfg.w_range = w_range;
    cfg.shape = std::make_shared<const ProtoShape>(node);
    return cfg;
}

/// Default benchmark cell: the gain break at +-c must fall inside the
/// argument window [2*bias - x - w, 2*bias + x + w]; c = 2.6 with bias 1.0
/// puts it there with the best accuracy-vs-spline-count behavior.
inline MultiplierConfig benchmark_multiplier(int n_splines, const TransistorModel& model,
                                             Real c = 2.6) {
    return make_multiplier(SacNodeConfig::proto(n_splines, c, model), 1.0);
}

/// y = h(2C+w+x) - h(2C+w-x) + h(2C-w-x) - h(2C-w+x). Antisymmetry in x and
/// in w is exact: negating either permutes the four identical evaluations.
inline Real multiply(Real x, Real w, const MultiplierConfig& cfg) {
    if (!std::isfinite(x) || std::abs(x) > cfg.x_range) {
        throw RangeError("multiplier input x outside the declared range");
    }
    if (!std::isfinite(w) || std::abs(w) > cfg.w_range) {
        throw RangeError("stored weight w outside the declared range");
    }
    const Real bp = 2.0 * cfg.bias_c + w;
    const Real bm = 2.0 * cfg.bias_c - w;
    const Real window = cfg.node.knots() + 10.0 * cfg.node.c;
    const struct {
        const char* name;
        Real arg;
    } terms[4] = {{"shape(2*bias + w + x)", bp + x},
                  {"shape(2*bias + w - x)", bp - x},
                  {"shape(2*bias - w - x)", bm - x},
                  {"shape(2*bias - w + x)", bm + x}};
    for (const auto& t : terms) {
        if (std::abs(t.arg) > window) {
            throw RangeError(std::string("multiplier term ") + t.name +
                             " leaves the node's solver window (argument " +
                             std::to_string(t.arg) + ", window +-" +
                             std::to_string(window) + ")");
        }
    }
    std::optional<ProtoShape> local;
    const ProtoShape* sp = cfg.shape.get();
    if (sp == nullptr) {
        local.emplace(cfg.node);
        sp = &*local;
    }
    const ProtoShape& h = *sp;
    Real y = (h(terms[0].arg) - h(terms[1].arg)) + (h(terms[2].arg) - h(terms[3].arg));
    if (cfg.scale_output) {
        const Real gain = cfg.gain_map.linear_gain();
        if (!(std::abs(gain) > 1e-12)) {
            throw CalibrationError(
                "output scaling requested but the calibrated linear gain is zero");
        }
        y /= 2.0 * gain;
    }
    return y;
}

/// Small-signal gain map g(w) = y(eps, w) / (2 eps) on the given weight grid;
/// the probe is 1e-4 of the declared input range. The measured map must be
/// monotone (nondecreasing); it is odd by the cell's exact antisymmetry.
inline GainMap multiply_calibrate(const MultiplierConfig& cfg,
                                  const std::vector<Real>& w_grid) {
    if (w_grid.empty()) throw ParameterError("calibration needs a non-empty weight grid");
    std::vector<Real> ws(w_grid);
    std::sort(ws.begin(), ws.end());
    ws.erase(std::unique(ws.begin(), ws.end()), ws.end());
    for (Real wv : ws) {
        if (!std::isfinite(wv) || std::abs(wv) > cfg.w_range) {
            throw ParameterError("calibration grid point outside the declared range");
        }
    }
    const Real eps = 1e-4 * cfg.x_range;
    std::vector<Real> gs(ws.size());
    for (size_t i = 0; i < ws.size(); ++i) {
        gs[i] = multiply(eps, ws[i], cfg) / (2.0 * eps);
    }
    return make_gain_map(std::move(ws), std::move(gs));
}

/// Multiply-accumulate: plain summation of the per-element multiplier
/// outputs, fixed left-to-right order.
inline Real mac(const std::vector<DifferentialSignal>& xs, const std::vector<Real>& ws,
                const MultiplierConfig& cfg) {
    if (xs.size() != ws.size()) {
        throw ParameterError("mac needs one weight per input");
    }
    Real acc = 0.0;
    for (size_t k = 0; k < xs.size(); ++k) {
        acc += multiply(xs[k].value(), ws[k], cfg);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Soft-ReLU
// ---------------------------------------------------------------------------

/// Normalized saturating curve of the node evaluated over inputs {x, 0} with
/// the constraint current overridden to `c`: tends to 0 for x -> -inf, to x
/// for x -> +inf, and converges pointwise to max(x, 0) as c -> 0.
inline Real soft_relu(Real x, Real c, const SacNodeConfig& node) {
    if (!(c > 0) || !std::isfinite(c)) {
        throw ParameterError("soft-relu needs a positive constraint current");
    }
    SacNodeConfig cfg = node;
    cfg.c = c;
    return ProtoShape(cfg)(x);
}

}  // namespace sacforge
