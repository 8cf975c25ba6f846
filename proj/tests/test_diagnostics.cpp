#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "ovsim/diagnostics.hpp"

using namespace ovsim;
using Catch::Approx;

namespace {

const double e1 = std::exp(1.0);

State uniform(const Grid& g, double a, double b, double v, double z) {
    return State{0.0, Field(g, Quantity::a, a), Field(g, Quantity::b, b), Field(g, Quantity::v, v),
                 Field(g, Quantity::z, z), 0, 0};
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> t(n);
    for (int k = 0; k < n; ++k) t[k] = lo + (hi - lo) * k / (n - 1);
    return t;
}

std::vector<DiagnosticsRecord> canonical_records(int n, double t_end, double cadence) {
    const Parameters p;
    const Grid g = Grid::make(n, n);
    SolverConfig cfg;
    cfg.cfl_safety = 0.8;
    cfg.t_end = t_end;
    cfg.cadence = cadence;
    std::vector<DiagnosticsRecord> rec;
    run(make_initial(g, InitialProfile::canonical(), p), p, g, cfg,
        [&](const State& s) { rec.push_back(collect(s, p, g)); });
    return rec;
}

} // namespace

TEST_CASE("lyapunov F closed forms") {
    const Parameters p;
    const Grid g = Grid::make(8, 8);
    CHECK(lyapunov_F(uniform(g, 1, 1, 0.3, 0), p, g) == 0.0);
    CHECK(lyapunov_F(uniform(g, e1, 0, 0, 0), p, g) == Approx(e1).epsilon(1e-14));
    // the virus term is the full integral of z^2
    CHECK(lyapunov_F(uniform(g, 1, 0, 0, 0.5), p, g) == Approx(0.25).epsilon(1e-14));
    CHECK(lyapunov_F(uniform(g, 1, 1e-320, 0, 0), p, g) == 0.0);
}

TEST_CASE("entropy closed forms") {
    const Parameters p;
    const Grid g = Grid::make(8, 8);
    CHECK(entropy_u(uniform(g, 1, 0.2, 0.7, 0.1), p, g) == 0.0);
    CHECK(entropy_u(uniform(g, e1, 0, 0, 0), p, g) == Approx(e1 - 2).epsilon(1e-14));
    State s = uniform(g, 0.5, 0, 0, 0);
    s.a[5] = 0.0;
    CHECK(entropy_u(s, p, g) == std::numeric_limits<double>::infinity());
    for (double a : {1e-8, 0.3, 0.99, 1.01, 7.0}) CHECK(entropy_u(uniform(g, a, 0, 0.4, 0), p, g) > 0.0);
}

TEST_CASE("L log L monitors") {
    const Grid g = Grid::make(8, 8);
    auto m = llogl_monitors(uniform(g, 1, 1, 0, 0), g);
    CHECK(m.a == 0.0);
    CHECK(m.b == 0.0);
    m = llogl_monitors(uniform(g, 1 / e1, 0, 0, 0), g);
    CHECK(m.a == Approx(1 / e1).epsilon(1e-14));
    CHECK(m.b == 0.0);
}

TEST_CASE("collect on equilibrium and homogeneous states") {
    const Parameters p;
    const Grid g = Grid::make(16, 8, 2.0, 1.0);
    const auto r = collect(uniform(g, 1, 0, 0, 0), p, g);
    CHECK(r.M_u == Approx(2.0).epsilon(1e-15));
    for (double x : {r.M_w, r.M_z, r.u_minus_1_inf, r.v_inf, r.w_inf, r.z_inf, r.u_dev_l2sq, r.a_llogl, r.b_llogl, r.F,
                     r.E, r.G2, r.G4})
        CHECK(x == 0.0);
    CHECK(r.min_a == 1.0);
    CHECK(r.a_positive);

    const auto h = collect(uniform(g, 0.3, 0.2, 0.6, 0.1), p, g);
    CHECK(h.G2 == 0.0);
    CHECK(h.G4 == 0.0);
}

TEST_CASE("collect matches an independent recomputation") {
    const Parameters p;
    const Grid g = Grid::make(20, 12, 1.0, 0.6);
    const State s = make_initial(g, InitialProfile::canonical(), p);
    const auto r = collect(s, p, g);

    double mu = 0, mw = 0, mz = 0, du = 0, vi = 0, wi = 0, zi = 0, l2 = 0, la = 0, lb = 0, F = 0, E = 0, mina = 1e300,
           minu = 1e300;
    const double da = g.hx() * g.hy();
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double u = s.a[k] * std::exp(p.chi_u() * s.v[k]);
        const double w = s.b[k] * std::exp(p.chi_w() * s.v[k]);
        mu += u * da;
        mw += w * da;
        mz += s.z[k] * da;
        du = std::max(du, std::fabs(u - 1));
        vi = std::max(vi, s.v[k]);
        wi = std::max(wi, w);
        zi = std::max(zi, s.z[k]);
        l2 += (u - 1) * (u - 1) * da;
        la += s.a[k] * std::fabs(std::log(s.a[k])) * da;
        lb += s.b[k] * std::fabs(std::log(s.b[k])) * da;
        F += (std::exp(p.chi_u() * s.v[k]) * s.a[k] * std::log(s.a[k]) +
              std::exp(p.chi_w() * s.v[k]) * s.b[k] * std::log(s.b[k]) + s.z[k] * s.z[k]) *
             da;
        E += std::exp(p.chi_u() * s.v[k]) * (s.a[k] - 1 - std::log(s.a[k])) * da;
        mina = std::min(mina, s.a[k]);
        minu = std::min(minu, u);
    }
    CHECK(r.t == 0.0);
    CHECK(r.M_u == Approx(mu).epsilon(1e-13));
    CHECK(r.M_w == Approx(mw).epsilon(1e-13));
    CHECK(r.M_z == Approx(mz).epsilon(1e-13));
    CHECK(r.u_minus_1_inf == Approx(du).epsilon(1e-13));
    CHECK(r.v_inf == vi);
    CHECK(r.w_inf == Approx(wi).epsilon(1e-13));
    CHECK(r.z_inf == zi);
    CHECK(r.u_dev_l2sq == Approx(l2).epsilon(1e-12));
    CHECK(r.a_llogl == Approx(la).epsilon(1e-12));
    CHECK(r.b_llogl == Approx(lb).epsilon(1e-12));
    CHECK(r.F == Approx(F).epsilon(1e-12));
    CHECK(r.E == Approx(E).epsilon(1e-12));
    CHECK(r.G2 == Approx(gradient_sq_integral(s.v, g)).epsilon(1e-14));
    CHECK(r.G4 == Approx(gradient_quartic_integral(s.v, g)).epsilon(1e-14));
    CHECK(r.min_a == mina);
    CHECK(r.min_u == Approx(minu).epsilon(1e-14));
    CHECK(r.clip_events == 0);
}

TEST_CASE("fit_decay on exact and perturbed data") {
    auto t = linspace(0.0, 5.0, 20);
    std::vector<double> y(t.size()), c(t.size(), 4.2), q(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) y[k] = 3 * std::exp(-2 * t[k]);
    auto f = fit_decay(t, y, 0.0, 5.0, "y");
    CHECK(f.rate == Approx(2.0).margin(1e-10));
    CHECK(f.r_squared == Approx(1.0).margin(1e-12));
    CHECK(f.log_intercept == Approx(std::log(3.0)).margin(1e-10));
    CHECK(f.samples == 20);
    CHECK(f.quantity == "y");

    CHECK(fit_decay(t, c, 0.0, 5.0).rate == Approx(0.0).margin(1e-14));

    t = linspace(0.0, 20.0, 200);
    y.assign(t.size(), 0.0);
    for (std::size_t k = 0; k < t.size(); ++k) y[k] = std::exp(-t[k]) * (1 + 0.01 * std::sin(t[k]));
    f = fit_decay(t, y, 0.0, 20.0);
    CHECK(std::fabs(f.rate - 1.0) <= 0.02);
    CHECK(f.r_squared >= 0.999);
}

TEST_CASE("fit_decay is scale invariant") {
    const auto t = linspace(1.0, 9.0, 40);
    std::vector<double> y(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) y[k] = std::exp(-0.3 * t[k]) * (1 + 0.1 * std::cos(3 * t[k]));
    const auto base = fit_decay(t, y, 1.0, 9.0);
    for (double c : {1e-6, 0.5, 17.0, 1e8}) {
        std::vector<double> s(y);
        for (double& x : s) x *= c;
        const auto f = fit_decay(t, s, 1.0, 9.0);
        CHECK(f.rate == Approx(base.rate).epsilon(1e-9));
        CHECK(f.r_squared == Approx(base.r_squared).epsilon(1e-9));
        CHECK(f.log_intercept == Approx(base.log_intercept + std::log(c)).margin(1e-9));
    }
}

TEST_CASE("fit_decay errors") {
    const auto t = linspace(0.0, 1.0, 20);
    std::vector<double> y(t.size(), 1.0);
    y[15] = 0.0;
    CHECK_THROWS_AS(fit_decay(t, y, 0.0, 1.0), FitError);
    CHECK_NOTHROW(fit_decay(t, y, 0.0, 0.7));
    CHECK_THROWS_AS(fit_decay(t, y, 0.0, 0.3), FitError); // 6 samples
    CHECK_THROWS_AS(fit_decay(t, y, 0.5, 0.5), FitError);
    CHECK_THROWS_AS(fit_decay(t, std::vector<double>(3, 1.0), 0.0, 1.0), DimensionError);
}

TEST_CASE("fit window defaults") {
    CHECK(FitWindow{}.resolve(40.0) == std::pair{20.0, 40.0});
    CHECK(FitWindow{3.0, std::nullopt}.resolve(40.0) == std::pair{3.0, 40.0});
    CHECK(FitWindow{std::nullopt, 10.0}.resolve(40.0) == std::pair{20.0, 10.0});
}

TEST_CASE("rate report on synthetic series") {
    const Parameters p; // delta = 0.5, gamma_1 = 0.25
    std::vector<DiagnosticsRecord> rec;
    for (int k = 0; k <= 100; ++k) {
        DiagnosticsRecord r;
        r.t = 0.2 * k;
        r.M_w = 0.5 * std::exp(-0.49 * r.t); // within 5% of delta
        r.M_z = 0.5 * std::exp(-0.49 * r.t);
        r.z_inf = std::exp(-0.2 * r.t); // below gamma_1 by more than 5%
        r.v_inf = std::exp(-0.99 * r.t);
        r.min_u = 0.9;
        r.min_a = 0.5;
        r.u_minus_1_inf = std::exp(-0.1 * r.t);
        r.w_inf = std::exp(0.05 * r.t); // growing
        r.G2 = std::exp(-r.t);
        r.G4 = std::exp(-2 * r.t);
        r.F = 1e-3 * std::exp(-0.3 * r.t);
        r.E = 0.0;
        rec.push_back(r);
    }
    const auto rep = rate_report(rec, p);
    CHECK(rep.t_lo == 10.0);
    CHECK(rep.t_hi == 20.0);
    CHECK(rep.gamma_u == 0.9);
    CHECK(rep.find("M_w+M_z")->status == RateStatus::pass);
    CHECK(rep.find("M_w+M_z")->fit->rate == Approx(0.49).epsilon(1e-10));
    CHECK(rep.find("z_inf")->status == RateStatus::fail);
    CHECK(rep.find("v_inf")->bound == Approx(0.9));
    CHECK(rep.find("v_inf")->status == RateStatus::pass);
    CHECK(rep.find("u_minus_1_inf")->status == RateStatus::pass);
    CHECK(rep.find("w_inf")->status == RateStatus::fail);
    CHECK(rep.find("F_dev")->status == RateStatus::pass);
    CHECK(rep.find("E")->status == RateStatus::at_equilibrium);
    CHECK_FALSE(rep.all_pass());
    CHECK(rep.entries.size() == 9);

    rec[80].G2 = -1.0;
    CHECK(rate_report(rec, p).find("G2")->status == RateStatus::fit_error);
}

TEST_CASE("rate report flags runs outside the convergence regime") {
    Parameters p;
    p.beta = 1.5;
    const auto rep = rate_report(std::vector<DiagnosticsRecord>{}, p);
    CHECK_FALSE(rep.convergence_regime);
    CHECK(rep.warnings.size() == 2);
}

TEST_CASE("monitors along a coarse canonical run") {
    const auto rec = canonical_records(32, 30.0, 0.1);
    REQUIRE(rec.size() == 301);
    // sup v never increases, E stays nonnegative, L log L stays bounded
    double lmax = 0.0;
    for (std::size_t k = 1; k < rec.size(); ++k) {
        CHECK(rec[k].v_inf <= rec[k - 1].v_inf);
        CHECK(rec[k].E >= 0.0);
        CHECK(rec[k].a_positive);
        CHECK(std::isfinite(rec[k].a_llogl));
        CHECK(std::isfinite(rec[k].b_llogl));
        lmax = std::fmax(lmax, rec[k].a_llogl + rec[k].b_llogl);
    }
    CHECK(lmax < 10.0);

    // F stays below max(F(t1), plateau) past t1 = 5, the plateau being the
    // largest value over the final fifth
    double plateau = 0.0;
    for (const auto& r : rec)
        if (r.t >= 24.0) plateau = std::fmax(plateau, r.F);
    double f1 = 0.0;
    for (const auto& r : rec) {
        if (r.t == 5.0) f1 = r.F;
        if (r.t >= 5.0) CHECK(r.F <= std::fmax(f1, plateau) + 1e-12);
    }

    // E decreases over the final third
    for (std::size_t k = 1; k < rec.size(); ++k) {
        if (rec[k - 1].t >= 20.0) CHECK(rec[k].E < rec[k - 1].E);
    }

    // G2 and G4 are positive and decay
    const auto rep = rate_report(rec, Parameters{});
    CHECK(rep.find("G2")->status == RateStatus::pass);
    CHECK(rep.find("G4")->status == RateStatus::pass);
}
