#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovsim/errors.hpp"
#include "ovsim/grid.hpp"
#include "ovsim/parameters.hpp"
#include "ovsim/solver.hpp"

namespace ovsim {

// Densities at or below this are treated as zero inside logarithms.
inline constexpr double log_floor = 1e-300;

namespace detail {

inline double xlogx(double s) { return s > log_floor ? s * std::log(s) : 0.0; }
inline double x_abslogx(double s) { return s > log_floor ? s * std::fabs(std::log(s)) : 0.0; }

// s - 1 - log s, accurate near s = 1 where both terms nearly cancel.
inline double relative_entropy_density(double s) {
    const double d = s - 1.0;
    return d - std::log1p(d);
}

} // namespace detail

/// One sample of every monitored functional.
struct DiagnosticsRecord {
    double t = 0.0;
    double M_u = 0.0;
    double M_w = 0.0;
    double M_z = 0.0;
    double u_minus_1_inf = 0.0;
    double v_inf = 0.0;
    double w_inf = 0.0;
    double z_inf = 0.0;
    double u_dev_l2sq = 0.0; // int (u - 1)^2
    double a_llogl = 0.0;    // int a |log a|
    double b_llogl = 0.0;    // int b |log b|
    double F = 0.0;          // int e^{chi_u v} a log a + int e^{chi_w v} b log b + int z^2
    double E = 0.0;          // int e^{chi_u v} (a - 1 - log a)
    double G2 = 0.0;         // int |grad v|^2
    double G4 = 0.0;         // int |grad v|^4
    double min_a = 0.0;
    double min_u = 0.0;
    bool a_positive = true; // false: some a <= 1e-300 and E covers only the positive cells
    std::int64_t clip_events = 0;

    friend bool operator==(const DiagnosticsRecord&, const DiagnosticsRecord&) = default;
};

/// CSV schema, in column order.
struct DiagnosticsColumn {
    std::string_view name;
    double DiagnosticsRecord::*member; // null for the integer/bool columns
};

inline constexpr std::array<DiagnosticsColumn, 19> diagnostics_columns{{
    {"t", &DiagnosticsRecord::t},
    {"M_u", &DiagnosticsRecord::M_u},
    {"M_w", &DiagnosticsRecord::M_w},
    {"M_z", &DiagnosticsRecord::M_z},
    {"u_minus_1_inf", &DiagnosticsRecord::u_minus_1_inf},
    {"v_inf", &DiagnosticsRecord::v_inf},
    {"w_inf", &DiagnosticsRecord::w_inf},
    {"z_inf", &DiagnosticsRecord::z_inf},
    {"u_dev_l2sq", &DiagnosticsRecord::u_dev_l2sq},
    {"a_llogl", &DiagnosticsRecord::a_llogl},
    {"b_llogl", &DiagnosticsRecord::b_llogl},
    {"F", &DiagnosticsRecord::F},
    {"E", &DiagnosticsRecord::E},
    {"G2", &DiagnosticsRecord::G2},
    {"G4", &DiagnosticsRecord::G4},
    {"min_a", &DiagnosticsRecord::min_a},
    {"min_u", &DiagnosticsRecord::min_u},
    {"a_positive", nullptr},
    {"clip_events", nullptr},
}};

// ---------------------------------------------------------------------------
// Functionals
// ---------------------------------------------------------------------------

inline double lyapunov_F(const State& s, const Parameters& p, const Grid& g) {
    s.validate(g);
    const double cu = p.chi_u();
    const double cw = p.chi_w();
    double sum = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        sum += std::exp(cu * s.v[k]) * detail::xlogx(s.a[k]) + std::exp(cw * s.v[k]) * detail::xlogx(s.b[k]) +
               s.z[k] * s.z[k];
    }
    return sum * g.cell_area();
}

/// int e^{chi_u v} (a - 1 - log a). Returns +inf if some a <= 1e-300.
inline double entropy_u(const State& s, const Parameters& p, const Grid& g) {
    s.validate(g);
    const double cu = p.chi_u();
    double sum = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!(s.a[k] > log_floor)) return std::numeric_limits<double>::infinity();
        sum += std::exp(cu * s.v[k]) * detail::relative_entropy_density(s.a[k]);
    }
    return sum * g.cell_area();
}

struct LlogLPair {
    double a;
    double b;
};

inline LlogLPair llogl_monitors(const State& s, const Grid& g) {
    s.validate(g);
    double sa = 0.0;
    double sb = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        sa += detail::x_abslogx(s.a[k]);
        sb += detail::x_abslogx(s.b[k]);
    }
    return {sa * g.cell_area(), sb * g.cell_area()};
}

/// Aggregates every monitor for one snapshot. Each entry is an independent
/// quadrature or cellwise extremum of the reconstructed fields.
inline DiagnosticsRecord collect(const State& s, const Parameters& p, const Grid& g) {
    s.validate(g);
    const double cu = p.chi_u();
    const double cw = p.chi_w();
    DiagnosticsRecord r;
    r.t = s.t;
    r.clip_events = s.clip_events;
    r.min_a = std::numeric_limits<double>::infinity();
    r.min_u = std::numeric_limits<double>::infinity();

    double mu = 0.0, mw = 0.0, mz = 0.0, dev2 = 0.0, la = 0.0, lb = 0.0, f = 0.0, e = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double a = s.a[k];
        const double b = s.b[k];
        const double v = s.v[k];
        const double z = s.z[k];
        const double eu = std::exp(cu * v);
        const double ew = std::exp(cw * v);
        const double u = a * eu;
        const double w = b * ew;
        mu += u;
        mw += w;
        mz += z;
        dev2 += (u - 1.0) * (u - 1.0);
        la += detail::x_abslogx(a);
        lb += detail::x_abslogx(b);
        f += eu * detail::xlogx(a) + ew * detail::xlogx(b) + z * z;
        if (a > log_floor) {
            e += eu * detail::relative_entropy_density(a);
        } else {
            r.a_positive = false;
        }
        r.u_minus_1_inf = std::fmax(r.u_minus_1_inf, std::fabs(u - 1.0));
        r.v_inf = std::fmax(r.v_inf, v);
        r.w_inf = std::fmax(r.w_inf, w);
        r.z_inf = std::fmax(r.z_inf, z);
        r.min_a = std::fmin(r.min_a, a);
        r.min_u = std::fmin(r.min_u, u);
    }
    const double dA = g.cell_area();
    r.M_u = mu * dA;
    r.M_w = mw * dA;
    r.M_z = mz * dA;
    r.u_dev_l2sq = dev2 * dA;
    r.a_llogl = la * dA;
    r.b_llogl = lb * dA;
    r.F = f * dA;
    r.E = e * dA;
    r.G2 = gradient_sq_integral(s.v, g);
    r.G4 = gradient_quartic_integral(s.v, g);
    return r;
}

// ---------------------------------------------------------------------------
// Exponential rate fitting
// ---------------------------------------------------------------------------

struct DecayFit {
    std::string quantity;
    double rate = 0.0;          // -(slope of log value against t)
    double log_intercept = 0.0; // log value at t = 0
    double r_squared = 0.0;
    double t_lo = 0.0;
    double t_hi = 0.0;
    std::size_t samples = 0;
};

/// Least squares of log(value) on t over samples with t in [t_lo, t_hi].
/// Needs at least 8 samples, all strictly positive.
inline DecayFit fit_decay(std::span<const double> t, std::span<const double> value, double t_lo, double t_hi,
                          std::string quantity = {}) {
    if (t.size() != value.size()) throw DimensionError("fit_decay: t and value lengths differ");
    if (!(t_lo < t_hi)) throw FitError("fit_decay: window must satisfy t_lo < t_hi");
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] < t_lo || t[k] > t_hi) continue;
        if (!(value[k] > 0.0) || !std::isfinite(value[k])) {
            throw FitError("fit_decay(" + quantity + "): nonpositive value " + std::to_string(value[k]) +
                           " at t=" + std::to_string(t[k]));
        }
        xs.push_back(t[k]);
        ys.push_back(std::log(value[k]));
    }
    if (xs.size() < 8) {
        throw FitError("fit_decay(" + quantity + "): " + std::to_string(xs.size()) + " samples in [" +
                       std::to_string(t_lo) + ", " + std::to_string(t_hi) + "], need 8");
    }
    const double n = static_cast<double>(xs.size());
    double xm = 0.0, ym = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        xm += xs[k];
        ym += ys[k];
    }
    xm /= n;
    ym /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double dx = xs[k] - xm;
        const double dy = ys[k] - ym;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (!(sxx > 0.0)) throw FitError("fit_decay(" + quantity + "): all samples at the same time");
    const double slope = sxy / sxx;
    double ss_res = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double r = ys[k] - (ym + slope * (xs[k] - xm));
        ss_res += r * r;
    }
    DecayFit fit;
    fit.quantity = std::move(quantity);
    fit.rate = -slope;
    fit.log_intercept = ym - slope * xm;
    fit.r_squared = syy > 0.0 ? std::fmax(0.0, 1.0 - ss_res / syy) : 1.0;
    fit.t_lo = t_lo;
    fit.t_hi = t_hi;
    fit.samples = xs.size();
    return fit;
}

// ---------------------------------------------------------------------------
// Fitted rates against the guaranteed exponents
// ---------------------------------------------------------------------------

/// Fit window. Unset bounds default to the final half of the run, never
/// starting before 10% of the final time.
struct FitWindow {
    std::optional<double> t_lo;
    std::optional<double> t_hi;

    std::pair<double, double> resolve(double t_final) const {
        const double hi = t_hi.value_or(t_final);
        const double lo = t_lo.value_or(std::fmax(0.5 * t_final, 0.1 * t_final));
        return {lo, hi};
    }
};

enum class RateStatus { pass, fail, at_equilibrium, fit_error };

inline std::string_view to_string(RateStatus s) {
    switch (s) {
    case RateStatus::pass: return "pass";
    case RateStatus::fail: return "fail";
    case RateStatus::at_equilibrium: return "already at equilibrium";
    case RateStatus::fit_error: return "fit error";
    }
    return "fit error";
}

struct RateEntry {
    std::string quantity;
    std::string bound_name;      // "delta", "gamma_1", "alpha_u*gamma_emp", "positive"
    double bound = 0.0;          // guaranteed lower bound on the rate (0: positivity only)
    std::optional<DecayFit> fit; // absent when at equilibrium or the fit failed
    RateStatus status = RateStatus::fit_error;
    std::string note;
};

struct RateReport {
    double t_lo = 0.0;
    double t_hi = 0.0;
    double tolerance = 0.05;
    bool convergence_regime = true;
    double gamma_u = 0.0; // min over the window of min-cell u
    double gamma_a = 0.0; // min over the window of min-cell a
    double eta1_testing = 0.0; // min{2 mu_u gamma, 2 gamma, delta}
    double eta1_final = 0.0;   // (1/2) min{gamma, mu_u gamma, (1-beta)/2, delta_z/2}
    std::vector<RateEntry> entries;
    std::vector<std::string> warnings;

    const RateEntry* find(std::string_view q) const {
        for (const auto& e : entries)
            if (e.quantity == q) return &e;
        return nullptr;
    }
    bool all_pass() const {
        return std::all_of(entries.begin(), entries.end(), [](const RateEntry& e) {
            return e.status == RateStatus::pass || e.status == RateStatus::at_equilibrium;
        });
    }
};

/// Value of F at the equilibrium (1, 0, 0, 0), the level |F - F_eq| decays to.
inline double lyapunov_F_equilibrium(const Parameters& p) {
    const Grid g = Grid::make(4, 4);
    State eq{0.0, Field(g, Quantity::a, 1.0), Field(g, Quantity::b), Field(g, Quantity::v), Field(g, Quantity::z), 0, 0};
    return lyapunov_F(eq, p, g);
}

/// Fits every decaying monitor over the window and compares with the
/// exponents the analysis guarantees: delta = min{1 - beta, delta_z} for
/// M_w + M_z, delta / 2 for ||z||_inf, alpha_u * gamma_emp for ||v||_inf, and
/// plain positivity for the rest. Lower bounds are one-sided: a fitted rate
/// may exceed them freely; it passes when rate >= bound * (1 - tolerance).
inline RateReport rate_report(std::span<const DiagnosticsRecord> records, const Parameters& p,
                              const FitWindow& window = {}, double tolerance = 0.05) {
    RateReport rep;
    rep.tolerance = tolerance;
    rep.convergence_regime = p.convergence_regime();
    if (!rep.convergence_regime) {
        rep.warnings.push_back("beta >= 1: outside the convergence regime, bounds are not guaranteed");
    }
    if (records.empty()) {
        rep.warnings.push_back("no diagnostics records");
        return rep;
    }
    std::tie(rep.t_lo, rep.t_hi) = window.resolve(records.back().t);

    std::vector<double> t;
    for (const auto& r : records) t.push_back(r.t);

    rep.gamma_u = std::numeric_limits<double>::infinity();
    rep.gamma_a = std::numeric_limits<double>::infinity();
    for (const auto& r : records) {
        if (r.t < rep.t_lo || r.t > rep.t_hi) continue;
        rep.gamma_u = std::fmin(rep.gamma_u, r.min_u);
        rep.gamma_a = std::fmin(rep.gamma_a, r.min_a);
    }
    if (!std::isfinite(rep.gamma_u)) rep.gamma_u = 0.0;
    if (!std::isfinite(rep.gamma_a)) rep.gamma_a = 0.0;

    const double delta = p.mass_decay_rate();
    const double ga = rep.gamma_a;
    rep.eta1_testing = std::fmin(std::fmin(2.0 * p.mu_u * ga, 2.0 * ga), delta);
    rep.eta1_final = 0.5 * std::fmin(std::fmin(ga, p.mu_u * ga), std::fmin(0.5 * (1.0 - p.beta), 0.5 * p.delta_z));

    const double F_eq = lyapunov_F_equilibrium(p);

    struct Spec {
        const char* quantity;
        const char* bound_name;
        double bound;
        double (*get)(const DiagnosticsRecord&, double);
    };
    const Spec specs[] = {
        {"M_w+M_z", "delta", delta, [](const DiagnosticsRecord& r, double) { return r.M_w + r.M_z; }},
        {"z_inf", "gamma_1", p.virus_decay_rate(), [](const DiagnosticsRecord& r, double) { return r.z_inf; }},
        {"v_inf", "alpha_u*gamma_emp", p.alpha_u * rep.gamma_u,
         [](const DiagnosticsRecord& r, double) { return r.v_inf; }},
        {"u_minus_1_inf", "positive", 0.0, [](const DiagnosticsRecord& r, double) { return r.u_minus_1_inf; }},
        {"w_inf", "positive", 0.0, [](const DiagnosticsRecord& r, double) { return r.w_inf; }},
        {"G2", "positive", 0.0, [](const DiagnosticsRecord& r, double) { return r.G2; }},
        {"G4", "positive", 0.0, [](const DiagnosticsRecord& r, double) { return r.G4; }},
        {"F_dev", "positive", 0.0, [](const DiagnosticsRecord& r, double feq) { return std::fabs(r.F - feq); }},
        {"E", "positive", 0.0, [](const DiagnosticsRecord& r, double) { return r.E; }},
    };

    for (const Spec& s : specs) {
        RateEntry e;
        e.quantity = s.quantity;
        e.bound_name = s.bound_name;
        e.bound = s.bound;
        std::vector<double> y;
        bool all_zero = true;
        for (const auto& r : records) {
            y.push_back(s.get(r, F_eq));
            if (r.t >= rep.t_lo && r.t <= rep.t_hi && y.back() != 0.0) all_zero = false;
        }
        if (all_zero) {
            e.status = RateStatus::at_equilibrium;
            e.note = "identically zero over the window";
        } else {
            try {
                e.fit = fit_decay(t, y, rep.t_lo, rep.t_hi, e.quantity);
                const bool ok = e.bound > 0.0 ? e.fit->rate >= e.bound * (1.0 - tolerance) : e.fit->rate > 0.0;
                e.status = ok ? RateStatus::pass : RateStatus::fail;
            } catch (const FitError& err) {
                e.status = RateStatus::fit_error;
                e.note = err.what();
            }
        }
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

} // namespace ovsim
