#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "ovsim/solver.hpp"

using namespace ovsim;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

double mass(const Field& f, const Grid& g) { return quadrature(f, g); }

double max_abs_diff(const Field& l, const Field& r) {
    double m = 0.0;
    for (std::size_t k = 0; k < l.size(); ++k) m = std::fmax(m, std::fabs(l[k] - r[k]));
    return m;
}

} // namespace

TEST_CASE("cfl_dt formula") {
    const Parameters p; // D_u = D_w = D_z = 0.1
    const Grid g = Grid::make(128, 128);
    const State s = make_initial(g, InitialProfile::equilibrium(), p);
    SolverConfig cfg;
    cfg.cfl_safety = 0.4;
    const double h = 1.0 / 128;
    CHECK(cfl_dt(p, g, s, cfg) == Approx(0.4 * h * h / (4 * 0.1)).epsilon(1e-14));

    Parameters p2 = p;
    p2.D_u *= 2;
    p2.D_w *= 2;
    p2.D_z *= 2;
    CHECK(cfl_dt(p2, g, s, cfg) == Approx(0.5 * cfl_dt(p, g, s, cfg)).epsilon(1e-14));

    cfg.scheme = Scheme::direct;
    CHECK(cfl_dt(p, g, s, cfg) == Approx(0.4 * h * h / (4 * 0.1)).epsilon(1e-14));

    State bad = s;
    bad.a = Field();
    CHECK_THROWS_AS(cfl_dt(p, g, bad, cfg), StateError);
}

TEST_CASE("solver config validation") {
    SolverConfig c;
    c.cfl_safety = 0.95;
    CHECK_THROWS_WITH(c.validate(), ContainsSubstring("cfl_safety"));
    c.cfl_safety = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.cadence = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_scheme("direct") == Scheme::direct);
    CHECK_THROWS_AS(parse_scheme("implicit"), ConfigError);
}

TEST_CASE("equilibrium is a fixed point of both steps") {
    const Parameters p;
    const Grid g = Grid::make(16, 16);
    const State s = make_initial(g, InitialProfile::equilibrium(), p);
    const double dt = cfl_dt(p, g, s, {});
    State t = s, d = s;
    for (int k = 0; k < 50; ++k) {
        t = step_transformed(t, p, g, dt);
        d = step_direct(d, p, g, dt);
    }
    for (const State* r : {&t, &d}) {
        CHECK(max_abs_diff(r->a, s.a) <= 1e-15);
        CHECK(max_abs_diff(r->b, s.b) == 0.0);
        CHECK(max_abs_diff(r->v, s.v) == 0.0);
        CHECK(max_abs_diff(r->z, s.z) == 0.0);
        CHECK(r->clip_events == 0);
    }
}

TEST_CASE("steps reject dt above the stability limit") {
    const Parameters p;
    const Grid g = Grid::make(16, 16);
    const State s = make_initial(g, InitialProfile::canonical(), p);
    const double lim = cfl_dt(p, g, s, {});
    CHECK_THROWS_AS(step_transformed(s, p, g, 1.01 * lim), StepError);
    CHECK_THROWS_AS(step_transformed(s, p, g, 0.0), StepError);
    SolverConfig dc;
    dc.scheme = Scheme::direct;
    CHECK_THROWS_AS(step_direct(s, p, g, 1.01 * cfl_dt(p, g, s, dc)), StepError);
}

TEST_CASE("large negativity aborts naming the field and cell") {
    const Parameters p;
    const Grid g = Grid::make(8, 8);
    State s = make_initial(g, InitialProfile::homogeneous(0.5, 0.0, 0.0, 0.0), p);
    for (int j = 0; j < 8; ++j) {
        for (int i = 0; i < 8; ++i) s.a(i, j) = (i + j) % 2 ? 1.0 : 0.0;
    }
    TransformedStepper st(p, g);
    st.bind(s);
    const double lim = cfl_from_stats(st.stats(), p, g, {});
    CHECK_THROWS_MATCHES(st.advance(s, 50 * lim, 1e-12), PositivityError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("a went negative") &&
                                                         ContainsSubstring("at cell (")));
}

TEST_CASE("direct step with v = 0 is a plain reaction-diffusion step") {
    const Parameters p;
    const Grid g = Grid::make(24, 20);
    const State s = make_initial(
        g, InitialProfile::cosine({1.0, 0.5, 1, 1}, {0.0, 0.0, 0, 0}, {0.3, 0.1, 2, 0}, {0.2, 0.15, 0, 1}), p);
    SolverConfig dc;
    dc.scheme = Scheme::direct;
    const double dt = 0.9 * cfl_dt(p, g, s, dc);
    const State n = step_direct(s, p, g, dt);

    // reference from the grid operators and pointwise kinetics
    const auto [u, w] = s.physical(p);
    const Field lu = laplacian(u, p.D_u, g), lw = laplacian(w, p.D_w, g), lz = laplacian(s.z, p.D_z, g);
    const auto [un, wn] = n.physical(p);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double inf = p.rho * u[k] * s.z[k];
        const double ru = u[k] + dt * (lu[k] + p.mu_u * u[k] * (1 - u[k]) - inf);
        const double rw = w[k] + dt * (lw[k] - w[k] + inf);
        const double rz = s.z[k] + dt * (lz[k] - p.delta_z * s.z[k] - inf + p.beta * w[k]);
        CHECK(un[k] == Approx(ru).epsilon(1e-13));
        CHECK(wn[k] == Approx(rw).epsilon(1e-13));
        CHECK(n.z[k] == Approx(rz).epsilon(1e-13));
        CHECK(n.v[k] == 0.0);
    }
}

TEST_CASE("transformed step matches the operator-level splitting") {
    Parameters p;
    p.xi_w = 0.6; // distinct weights
    const Grid g = Grid::make(20, 16);
    const State s = make_initial(g, InitialProfile::canonical(), p);
    const double dt = cfl_dt(p, g, s, {});
    const State n = step_transformed(s, p, g, dt);

    const auto [u, w] = s.physical(p);
    Field v(g, Quantity::v);
    for (std::size_t k = 0; k < g.size(); ++k) v[k] = s.v[k] * std::exp(-(p.alpha_u * u[k] + p.alpha_w * w[k]) * dt);
    const Field da = weighted_diffusion(s.a, v, p.chi_u(), p.D_u, g);
    const Field db = weighted_diffusion(s.b, v, p.chi_w(), p.D_w, g);
    const Field lz = laplacian(s.z, p.D_z, g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double ra = s.a[k] + dt * (da[k] + reaction_f(s.a[k], s.b[k], v[k], s.z[k], p));
        const double rb = s.b[k] + dt * (db[k] + reaction_g(s.a[k], s.b[k], v[k], s.z[k], p));
        const double rz = s.z[k] + dt * (lz[k] + reaction_z(u[k], w[k], s.z[k], p));
        CHECK(n.v[k] == Approx(v[k]).epsilon(1e-15));
        CHECK(n.a[k] == Approx(ra).epsilon(1e-12));
        CHECK(n.b[k] == Approx(rb).epsilon(1e-12));
        CHECK(n.z[k] == Approx(rz).epsilon(1e-12));
    }
}

TEST_CASE("one-step mass residual is second order in dt") {
    const Parameters p;
    const Grid g = Grid::make(32, 32);
    const State s = make_initial(g, InitialProfile::canonical(), p);
    const auto [u0, w0] = s.physical(p);
    const double mw = mass(w0, g), mz = mass(s.z, g);
    auto residual = [&](double dt) {
        const State n = step_transformed(s, p, g, dt);
        const auto [u1, w1] = n.physical(p);
        return std::fabs(mass(w1, g) + mass(n.z, g) - mw - mz + dt * ((1 - p.beta) * mw + p.delta_z * mz));
    };
    const double dt = cfl_dt(p, g, s, {});
    const double r1 = residual(dt), r2 = residual(0.5 * dt), r3 = residual(0.25 * dt);
    CHECK(r1 / r2 == Approx(4.0).margin(0.3));
    CHECK(r2 / r3 == Approx(4.0).margin(0.3));
}

TEST_CASE("run output cadence") {
    const Parameters p;
    const Grid g = Grid::make(8, 8);
    const State s0 = make_initial(g, InitialProfile::canonical(), p);
    SolverConfig cfg;
    std::vector<double> ts;
    auto sink = [&](const State& s) { ts.push_back(s.t); };

    cfg.t_end = 0.0;
    const State same = run(s0, p, g, cfg, sink);
    CHECK(ts == std::vector<double>{0.0});
    CHECK(same.a == s0.a);

    ts.clear();
    cfg.t_end = 0.05;
    cfg.cadence = 1.0;
    run(s0, p, g, cfg, sink);
    CHECK(ts == std::vector<double>{0.0, 0.05});

    ts.clear();
    cfg.t_end = 0.3;
    cfg.cadence = 0.1;
    run(s0, p, g, cfg, sink);
    CHECK(ts == std::vector<double>{0.0, 0.1, 0.2, 0.3});
}

TEST_CASE("runs are deterministic") {
    const Parameters p;
    const Grid g = Grid::make(16, 16);
    SolverConfig cfg;
    cfg.t_end = 0.5;
    for (Scheme sc : {Scheme::transformed, Scheme::direct}) {
        cfg.scheme = sc;
        const State a = run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg);
        const State b = run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg);
        CHECK(a.a == b.a);
        CHECK(a.b == b.b);
        CHECK(a.v == b.v);
        CHECK(a.z == b.z);
        CHECK(a.step_count == b.step_count);
        CHECK(a.t == 0.5);
    }
}

TEST_CASE("restart from an intermediate state is bit identical") {
    const Parameters p;
    const Grid g = Grid::make(16, 16);
    SolverConfig cfg;
    cfg.cadence = 0.1;
    cfg.t_end = 1.0;
    const State full = run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg);
    cfg.t_end = 0.5;
    const State half = run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg);
    cfg.t_end = 1.0;
    const State resumed = run(half, p, g, cfg);
    CHECK(resumed.a == full.a);
    CHECK(resumed.b == full.b);
    CHECK(resumed.v == full.v);
    CHECK(resumed.z == full.z);
    CHECK(resumed.step_count == full.step_count);
}

TEST_CASE("positivity, v monotonicity and v bound along a canonical run") {
    const Parameters p;
    const Grid g = Grid::make(128, 128);
    const State s0 = make_initial(g, InitialProfile::canonical(), p);
    const double vmax0 = s0.v.max();
    std::vector<double> prev(s0.v.values().begin(), s0.v.values().end());
    std::int64_t increases = 0, steps = 0;
    double vmax = 0.0, fmin = 1.0;
    auto hook = [&](const State& s, double) {
        ++steps;
        for (std::size_t k = 0; k < prev.size(); ++k) {
            if (s.v[k] > prev[k]) ++increases;
            prev[k] = s.v[k];
        }
        vmax = std::fmax(vmax, s.v.max());
        for (const Field* f : {&s.a, &s.b, &s.z}) fmin = std::fmin(fmin, f->min());
    };
    SolverConfig cfg;
    cfg.cadence = 1.0;
    cfg.t_end = 100.0;
    // stop after 10^4 steps by ending the run at the time those steps reach
    State s = s0;
    while (steps < 10000) {
        cfg.t_end = s.t + 0.05;
        s = run(s, p, g, cfg, {}, hook);
    }
    CHECK(s.clip_events == 0);
    CHECK(increases == 0);
    CHECK(vmax <= vmax0);
    CHECK(fmin >= 0.0);
}

TEST_CASE("make_initial profiles") {
    const Parameters p;
    const Grid g = Grid::make(32, 24);
    const State e = make_initial(g, InitialProfile::equilibrium(), p);
    for (std::size_t k = 0; k < g.size(); ++k) {
        CHECK(e.a[k] == 1.0);
        CHECK(e.b[k] == 0.0);
        CHECK(e.v[k] == 0.0);
        CHECK(e.z[k] == 0.0);
    }
    const State h = make_initial(g, InitialProfile::homogeneous(0.5, 1, 0.2, 0.2), p);
    const auto [hu, hw] = h.physical(p);
    CHECK(h.v.min() == 1.0);
    CHECK(h.v.max() == 1.0);
    CHECK(h.z.min() == 0.2);
    CHECK(h.z.max() == 0.2);
    CHECK(hu.min() == hu.max());
    CHECK(hu[0] == Approx(0.5).epsilon(1e-15));
    CHECK(hw[0] == Approx(0.2).epsilon(1e-15));

    const State c = make_initial(g, InitialProfile::canonical(), p);
    const auto [cu, cw] = c.physical(p);
    const double pi = std::acos(-1.0);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const double x = g.x(i), y = g.y(j);
            CHECK(cu(i, j) == Approx(1 + 0.5 * std::cos(pi * x) * std::cos(pi * y)).epsilon(1e-14));
            CHECK(c.v(i, j) == Approx(0.8 + 0.2 * std::cos(pi * x)).epsilon(1e-15));
            CHECK(cw(i, j) == Approx(0.3 + 0.1 * std::cos(pi * y)).epsilon(1e-14));
            CHECK(c.z(i, j) == 0.2);
        }
    }
    // the profile evaluated at the reflected ghost centers equals the
    // boundary cell, so the discrete normal difference of w vanishes
    const double hy = g.hy();
    for (int i = 0; i < g.nx; ++i) {
        CHECK(0.3 + 0.1 * std::cos(pi * (-0.5 * hy)) - (0.3 + 0.1 * std::cos(pi * g.y(0))) == 0.0);
        CHECK(std::fabs(0.1 * std::cos(pi * (1.0 + 0.5 * hy)) - 0.1 * std::cos(pi * g.y(g.ny - 1))) <= 1e-16);
    }

    CHECK_THROWS_AS(make_initial(g, InitialProfile::cosine({0.1, 0.2, 1, 0}, {}, {}, {}), p), DomainError);
    CHECK_THROWS_AS(make_initial(g, InitialProfile::homogeneous(-1, 0, 0, 0), p), DomainError);
}

TEST_CASE("schemes agree closely on a smooth run") {
    const Parameters p;
    const Grid g = Grid::make(32, 32);
    SolverConfig cfg;
    cfg.t_end = 0.5;
    const State t = run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg);
    cfg.scheme = Scheme::direct;
    const State d = run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg);
    const auto [ut, wt] = t.physical(p);
    const auto [ud, wd] = d.physical(p);
    CHECK(max_abs_diff(ut, ud) < 0.05);
    CHECK(max_abs_diff(t.v, d.v) < 0.02);
    CHECK(max_abs_diff(t.z, d.z) < 0.01);
}
