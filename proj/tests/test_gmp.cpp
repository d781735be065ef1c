#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "sacforge/gmp.hpp"

using namespace sacforge;
using Catch::Approx;

namespace {

// Independent oracle: bisect sum max(x - z, 0) = c to ~1e-13.
Real margin_bisect(const std::vector<Real>& xs, Real c) {
    Real lo = *std::min_element(xs.begin(), xs.end()) - c - 1.0;
    Real hi = *std::max_element(xs.begin(), xs.end());
    for (int i = 0; i < 200; ++i) {
        const Real mid = 0.5 * (lo + hi);
        Real sum = 0;
        for (Real x : xs) sum += std::max(x - mid, 0.0);
        (sum > c ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<TransistorModel> smooth_models() {
    return {make_model(Regime::WI), make_model(Regime::MI), make_model(Regime::SI)};
}

SacNodeConfig random_config(std::mt19937& rng, const TransistorModel& m) {
    std::uniform_int_distribution<int> nd(1, 4), sd(1, 4);
    std::uniform_real_distribution<Real> od(-1.0, 1.0), cd(0.1, 2.0);
    const int n = nd(rng), s = sd(rng);
    std::vector<Real> offs(static_cast<size_t>(n) * s);
    for (Real& o : offs) o = od(rng);
    return SacNodeConfig::make(n, s, std::move(offs), cd(rng), true, m, default_diode(m));
}

// Inputs guaranteed solvable: one input comfortably above c keeps the supply
// side of the constraint satisfiable for every law.
std::vector<Real> random_inputs(std::mt19937& rng, const SacNodeConfig& cfg) {
    std::uniform_real_distribution<Real> xd(-2.0, 3.0);
    std::vector<Real> x(cfg.n_inputs);
    for (Real& v : x) v = xd(rng);
    x[0] = cfg.c + 1.0 + std::abs(xd(rng)) + cfg.knots();
    return x;
}

}  // namespace

TEST_CASE("rectifier closed form matches the bisection oracle", "[gmp]") {
    CHECK(solve_rectifier_closed_form({2.0, 1.0}, 1.0) == Approx(1.0).margin(1e-12));
    CHECK(solve_rectifier_closed_form({3.5, 3.5}, 2.0) == Approx(2.5).margin(1e-12));
    CHECK(solve_rectifier_closed_form({5.0}, 1.0) == Approx(4.0).margin(1e-12));

    std::mt19937 rng(12345);
    std::uniform_int_distribution<int> md(1, 9);
    std::uniform_real_distribution<Real> xd(-5.0, 5.0), cd(0.05, 4.0);
    for (int t = 0; t < 300; ++t) {
        std::vector<Real> xs(md(rng));
        for (Real& x : xs) x = xd(rng);
        const Real c = cd(rng);
        const Real z = solve_rectifier_closed_form(xs, c);
        CHECK(z == Approx(margin_bisect(xs, c)).margin(1e-10));
        Real sum = 0;
        for (Real x : xs) sum += std::max(x - z, 0.0);
        CHECK(sum == Approx(c).epsilon(1e-12));
    }
    CHECK_THROWS_AS(solve_rectifier_closed_form({}, 1.0), ParameterError);
    CHECK_THROWS_AS(solve_rectifier_closed_form({1.0}, 0.0), ParameterError);
}

TEST_CASE("closed form is input-order independent under ties", "[gmp]") {
    const std::vector<Real> a{1.0, 2.0, 2.0, -0.5};
    std::vector<Real> b(a);
    std::sort(b.begin(), b.end());
    do {
        CHECK(solve_rectifier_closed_form(b, 0.8) ==
              solve_rectifier_closed_form(a, 0.8));
    } while (std::next_permutation(b.begin(), b.end()));
}

TEST_CASE("rectifier node solve equals the closed form", "[gmp]") {
    auto m = rectifier_model();
    auto cfg = SacNodeConfig::make(2, 1, {0.0, 0.0}, 1.0, false, m, default_diode(m));
    auto r = solve_node(cfg, {2.0, 1.0});
    CHECK(r.h == Approx(1.0).margin(1e-12));
    CHECK(r.residual <= 1e-9);

    std::mt19937 rng(777);
    for (int t = 0; t < 100; ++t) {
        auto c2 = random_config(rng, m);
        auto x = random_inputs(rng, c2);
        auto res = solve_node(c2, x);
        // Oracle: closed form on the flattened offset inputs (plus zero bank).
        std::vector<Real> flat;
        for (int i = 0; i < c2.n_inputs; ++i) {
            for (int j = 0; j < c2.n_splines; ++j) flat.push_back(x[i] + c2.offset(i, j));
        }
        for (int j = 0; j < c2.n_splines; ++j) flat.push_back(c2.offset(0, j));
        const Real z = solve_rectifier_closed_form(flat, c2.c);
        CHECK(res.h == Approx(z).margin(1e-6 * std::max(Real(1), std::abs(z))));
    }
}

TEST_CASE("raw rectifier margin goes negative with the zero reference bank",
          "[gmp]") {
    auto m = rectifier_model();
    auto cfg = SacNodeConfig::proto(1, 0.5, m);
    auto r = solve_node(cfg, {0.0});
    CHECK(r.h == Approx(-0.25).margin(1e-12));
    CHECK(r.v_b == Approx(-0.25).margin(1e-12));
}

TEST_CASE("single lone bank is a pure translation", "[gmp]") {
    // Without the zero bank, a single-input node shifts with its input at
    // exactly slope 1: the diode drop is pinned by the constraint.
    for (const auto& m : smooth_models()) {
        auto cfg = SacNodeConfig::make(1, 1, {0.0}, 0.3, false, m, default_diode(m));
        const Real h1 = solve_node(cfg, {1.0}).h;
        const Real h2 = solve_node(cfg, {2.5}).h;
        CHECK(h2 - h1 == Approx(1.5).epsilon(1e-9));
    }
}

TEST_CASE("solutions satisfy the per-element circuit relations", "[gmp]") {
    std::mt19937 rng(2024);
    for (const auto& m : smooth_models()) {
        for (int t = 0; t < 40; ++t) {
            auto cfg = random_config(rng, m);
            auto x = random_inputs(rng, cfg);
            auto r = solve_node(cfg, x);
            REQUIRE_FALSE(r.railed);

            // Constraint: diode currents sum to c.
            Real dsum = 0;
            for (int i = 0; i < cfg.n_inputs; ++i) {
                for (int j = 0; j < cfg.n_splines; ++j) {
                    dsum += diode_current(
                        cfg.diode,
                        r.v_internal[static_cast<size_t>(i) * cfg.n_splines + j] - r.v_b);
                }
            }
            for (Real vz : r.v_zero) dsum += diode_current(cfg.diode, vz - r.v_b);
            CHECK(dsum == Approx(cfg.c).epsilon(1e-9));
            CHECK(r.residual <= 1e-9 * cfg.c);

            // Element relation: channel + diode current carries the input.
            for (int i = 0; i < cfg.n_inputs; ++i) {
                for (int j = 0; j < cfg.n_splines; ++j) {
                    const Real ve =
                        r.v_internal[static_cast<size_t>(i) * cfg.n_splines + j];
                    const Real lhs = channel_current(cfg.model, r.v_b, 0.0, ve) +
                                     diode_current(cfg.diode, ve - r.v_b);
                    const Real xe = x[i] + cfg.offset(i, j);
                    CHECK(lhs == Approx(xe).margin(1e-9 * std::max(Real(1), std::abs(xe))));
                }
            }
            for (int j = 0; j < cfg.n_splines; ++j) {
                const Real lhs = channel_current(cfg.model, r.v_b, 0.0, r.v_zero[j]) +
                                 diode_current(cfg.diode, r.v_zero[j] - r.v_b);
                const Real xe = cfg.offset(0, j);
                CHECK(lhs == Approx(xe).margin(1e-9 * std::max(Real(1), std::abs(xe))));
            }

            // Output is the forward current at the solved common voltage.
            CHECK(r.h == Approx(forward_current(cfg.model, r.v_b)).epsilon(1e-12));
        }
    }
}

TEST_CASE("solution is independent of the initial iterate", "[gmp]") {
    std::mt19937 rng(555);
    for (const auto& m : smooth_models()) {
        for (int t = 0; t < 10; ++t) {
            auto cfg = random_config(rng, m);
            auto x = random_inputs(rng, cfg);
            const Real h0 = solve_node(cfg, x).h;
            for (int k = 0; k < 10; ++k) {
                SolveOptions o;
                o.vb_hint = -2.0 + 0.4 * k;
                const Real hk = solve_node(cfg, x, o).h;
                CHECK(hk == Approx(h0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("infeasible constraint rails the node", "[gmp]") {
    auto m = make_model(Regime::WI);
    auto cfg = SacNodeConfig::proto(1, 0.5, m);
    // Deep left tail: the zero bank alone cannot supply c = 0.5.
    CHECK_THROWS_AS(solve_node(cfg, {-5.0}), SolveError);
    SolveOptions o;
    o.allow_railed = true;
    auto r = solve_node(cfg, {-5.0}, o);
    CHECK(r.railed);
    CHECK(r.h == 0.0);
    CHECK(r.residual > 0);

    // The square law's supply is exactly the positive part of the inputs.
    auto si = make_model(Regime::SI);
    auto cfg2 = SacNodeConfig::proto(1, 0.5, si);
    CHECK(node_supply_limit(cfg2, {2.0}) == Approx(2.0).epsilon(1e-9));
    CHECK(node_supply_limit(cfg2, {-1.0}) == Approx(0.0).margin(1e-12));
    // Rectifier never rails.
    auto cfg3 = SacNodeConfig::proto(1, 0.5, rectifier_model());
    CHECK(std::isinf(node_supply_limit(cfg3, {-100.0})));
    CHECK(solve_node(cfg3, {-100.0}).h == Approx(-0.5).margin(1e-9));
}

TEST_CASE("square-law node equals the rectifier margin where feasible", "[gmp]") {
    auto si = make_model(Regime::SI);
    auto cfg = SacNodeConfig::proto(3, 0.5, si);
    SolveOptions o;
    o.allow_railed = true;
    for (Real x : {-0.4, -0.1, 0.0, 0.3, 0.8, 2.0, 5.0}) {
        std::vector<Real> flat;
        for (int j = 0; j < cfg.n_splines; ++j) flat.push_back(x + cfg.offset(0, j));
        for (int j = 0; j < cfg.n_splines; ++j) flat.push_back(cfg.offset(0, j));
        const Real z = solve_rectifier_closed_form(flat, cfg.c);
        const Real h = solve_node(cfg, {x}, o).h;
        if (z > 1e-6) {
            CHECK(h == Approx(z).epsilon(1e-7));
        } else {
            CHECK(h == Approx(std::max(z, 0.0)).margin(1e-7));
        }
    }
}

TEST_CASE("sensitivities match finite differences and stay in [0,1]", "[gmp]") {
    std::mt19937 rng(99);
    int checked = 0;
    for (const auto& m : {make_model(Regime::WI), make_model(Regime::MI)}) {
        for (int t = 0; t < 50; ++t) {
            auto cfg = random_config(rng, m);
            auto x = random_inputs(rng, cfg);
            auto sol = solve_node(cfg, x);
            auto jr = jacobian(cfg, sol);
            REQUIRE_FALSE(jr.used_finite_differences);
            Real total = 0;
            for (int i = 0; i < cfg.n_inputs; ++i) {
                const Real j = jr.dh_dx[i];
                CHECK(j >= -1e-12);
                CHECK(j <= 1.0 + 1e-12);
                total += j;
                const Real step = 1e-6 * std::max(Real(1), std::abs(x[i]));
                std::vector<Real> xp(x), xm(x);
                xp[i] += step;
                xm[i] -= step;
                const Real fd = (solve_node(cfg, xp).h - solve_node(cfg, xm).h) / (2 * step);
                CHECK(j == Approx(fd).margin(1e-5 * std::max(Real(0.01), std::abs(fd))));
                ++checked;
            }
            CHECK(total <= 1.0 + 1e-12);
        }
    }
    REQUIRE(checked >= 100);
}

TEST_CASE("rectifier sensitivities are uniform over the active set", "[gmp]") {
    auto m = rectifier_model();
    auto cfg = SacNodeConfig::make(3, 1, {0.0, 0.0, 0.0}, 0.9, false, m, default_diode(m));
    auto sol = solve_node(cfg, {4.0, 4.5, -3.0});  // two active inputs
    auto jr = jacobian(cfg, sol);
    CHECK(jr.dh_dx[0] == Approx(0.5).margin(1e-12));
    CHECK(jr.dh_dx[1] == Approx(0.5).margin(1e-12));
    CHECK(jr.dh_dx[2] == Approx(0.0).margin(1e-12));
}

TEST_CASE("proto-shape pinned rectifier values", "[gmp]") {
    auto cfg = SacNodeConfig::proto(1, 0.5, rectifier_model());
    ProtoShape shape(cfg);
    CHECK(shape.x_ref() == Approx(-5.0));
    CHECK(shape(10.0) == Approx(10.0).margin(1e-9));
    CHECK(shape(0.0) == Approx(0.25).margin(1e-9));
    CHECK(shape(shape.x_ref()) == Approx(0.0).margin(1e-12));
    CHECK(proto_shape(10.0, cfg) == Approx(10.0).margin(1e-9));
}

TEST_CASE("proto-shape is monotone with slope in [0,1] and the pinned asymptotes",
          "[gmp]") {
    for (const auto& m : {rectifier_model(), make_model(Regime::WI),
                          make_model(Regime::MI), make_model(Regime::SI)}) {
        auto cfg = SacNodeConfig::proto(3, 0.5, m);
        ProtoShape shape(cfg);
        const Real x_lo = shape.x_ref(), x_hi = -x_lo;
        Real prev = shape(x_lo);
        const int n = 201;
        for (int k = 1; k < n; ++k) {
            const Real x = x_lo + (x_hi - x_lo) * k / (n - 1);
            const Real y = shape(x);
            const Real slope = (y - prev) / ((x_hi - x_lo) / (n - 1));
            CHECK(slope >= -1e-6);
            CHECK(slope <= 1.0 + 1e-6);
            prev = y;
        }
        CHECK(shape.derivative(x_hi) == Approx(1.0).margin(1e-3));
        CHECK(shape.derivative(x_lo) == Approx(0.0).margin(1e-3));
    }
}

TEST_CASE("small-c proto-shape approaches the hinge and dominates the margin limit",
          "[gmp]") {
    auto m = make_model(Regime::WI);
    // c -> 0: the curve tends to max(x, 0). The residual deviation scales as
    // c / (2 n rho) with rho the diode saturation ratio, so pick c off the
    // ratio; the pedestal currents force a looser (absolute-noise) residual.
    const Real c_tiny = 0.05 * kDiodeSaturationRatio * m.slope_factor;
    auto cfg_small = SacNodeConfig::proto(1, c_tiny, m);
    SolveOptions lo_tol;
    lo_tol.allow_railed = true;
    lo_tol.residual_tol = 1e-2;
    const Real href = solve_node(cfg_small, {-30.0}, lo_tol).h;
    for (Real x : {-3.0, -1.0, -0.3, -0.02, 0.02, 0.3, 1.0, 3.0}) {
        const Real y = solve_node(cfg_small, {x}, lo_tol).h - href;
        CHECK(y == Approx(std::max(x, 0.0)).margin(0.04));
    }
    // Rectifier limit: exact hinge up to the c-sized correction.
    auto cfg_rect = SacNodeConfig::proto(1, 1e-6, rectifier_model());
    ProtoShape hinge(cfg_rect);
    for (Real x = -1.0; x <= 1.0; x += 0.1) {
        CHECK(hinge(x) == Approx(std::max(x, 0.0)).margin(1e-5));
    }
    // Soft-max dominance: the smooth curve sits above the hard margin minus c.
    auto cfg = SacNodeConfig::proto(1, 0.25, m);
    ProtoShape smooth(cfg);
    ProtoShape hard(SacNodeConfig::proto(1, 0.25, rectifier_model()));
    for (Real x = -1.5; x <= 3.0; x += 0.125) {
        CHECK(smooth(x) >= hard(x) - 0.25 - 1e-9);
    }
}

TEST_CASE("composed shapes: identity, negation, odd symmetry", "[gmp]") {
    auto cfg = SacNodeConfig::proto(1, 0.5, make_model(Regime::WI));
    ProtoShape base(cfg);

    auto ident = compose_shape({ShapeTerm{1.0, 0.0, 0.0, false, cfg}});
    for (Real x : {-1.0, 0.0, 0.7, 2.0}) CHECK(ident(x) == Approx(base(x)).margin(1e-12));

    auto flipped = compose_shape({ShapeTerm{-1.0, 0.0, 0.0, false, cfg}});
    Real prev = flipped(-2.0);
    for (Real x = -2.0 + 0.1; x <= 2.0; x += 0.1) {
        const Real cur = flipped(x);
        const Real slope = (cur - prev) / 0.1;
        CHECK(slope <= 1e-6);
        CHECK(slope >= -1.0 - 1e-6);
        prev = cur;
    }

    // Mirrored difference is odd (sigmoid-like family).
    auto odd = compose_shape({ShapeTerm{1.0, 0.0, 0.0, false, cfg},
                              ShapeTerm{-1.0, 0.0, 0.0, true, cfg}});
    for (Real x : {0.1, 0.5, 1.0, 2.5}) {
        CHECK(std::abs(odd(x) + odd(-x)) < 1e-9);
    }
}

TEST_CASE("sweep sampling contract", "[gmp]") {
    auto cfg = SacNodeConfig::proto(2, 0.5, rectifier_model());
    auto two = sweep(cfg, -1.0, 1.0, 2);
    REQUIRE(two.size() == 2);
    CHECK(two.front().first == -1.0);
    CHECK(two.back().first == 1.0);
    CHECK(two.front().second == Approx(0.0).margin(1e-12));  // normalized at x_min

    auto curve = sweep(cfg, -3.0, 3.0, 41);
    REQUIRE(curve.size() == 41);
    for (size_t k = 1; k < curve.size(); ++k) {
        CHECK(curve[k].second >= curve[k - 1].second - 1e-9);
    }
    CHECK_THROWS_AS(sweep(cfg, 1.0, -1.0, 5), ParameterError);
    CHECK_THROWS_AS(sweep(cfg, -1.0, 1.0, 1), ParameterError);
}

TEST_CASE("config validation", "[gmp]") {
    auto m = make_model(Regime::WI);
    auto d = default_diode(m);
    CHECK_THROWS_AS(SacNodeConfig::make(0, 1, {}, 1.0, true, m, d), ParameterError);
    CHECK_THROWS_AS(SacNodeConfig::make(1, 1, {0.0, 0.0}, 1.0, true, m, d),
                    ParameterError);
    CHECK_THROWS_AS(SacNodeConfig::make(1, 1, {0.0}, -1.0, true, m, d), ParameterError);
    CHECK_THROWS_AS(SacNodeConfig::make(1, 1, {NAN}, 1.0, true, m, d), ParameterError);
    auto cfg = SacNodeConfig::make(2, 1, {0.0, 0.0}, 1.0, false, m, d);
    CHECK_THROWS_AS(solve_node(cfg, {1.0}), ParameterError);           // wrong arity
    CHECK_THROWS_AS(solve_node(cfg, {1.0, NAN}), ParameterError);      // non-finite
    CHECK_THROWS_AS(ProtoShape(cfg), ParameterError);  // needs N=1 + zero bank
}
