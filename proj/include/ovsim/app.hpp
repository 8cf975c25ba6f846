#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ovsim/config.hpp"
#include "ovsim/diagnostics.hpp"
#include "ovsim/io.hpp"
#include "ovsim/model.hpp"
#include "ovsim/solver.hpp"

namespace ovsim {

// ---------------------------------------------------------------------------
// Per-step invariant monitor
// ---------------------------------------------------------------------------

/// Watches every step for the three pointwise invariants of the scheme:
/// v never increases in any cell, M_u stays below max{M_u(0), |Omega|},
/// and no value is clipped.
class InvariantMonitor {
public:
    InvariantMonitor(const State& initial, const Parameters& p, const Grid& g) : p_(p), g_(g) {
        prev_v_.assign(initial.v.values().begin(), initial.v.values().end());
        m_u_bound_ = std::fmax(mass_u(initial), g.area());
        m_u_max_ = mass_u(initial);
    }

    StepHook hook() {
        return [this](const State& s, double) { observe(s); };
    }

    void observe(const State& s) {
        const auto v = s.v.values();
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (v[k] > prev_v_[k]) {
                ++v_increases_;
                v_max_increase_ = std::fmax(v_max_increase_, v[k] - prev_v_[k]);
            }
        }
        std::copy(v.begin(), v.end(), prev_v_.begin());
        m_u_max_ = std::fmax(m_u_max_, mass_u(s));
        clip_events_ = s.clip_events;
        ++steps_;
    }

    std::int64_t v_increases() const { return v_increases_; }
    double v_max_increase() const { return v_max_increase_; }
    double m_u_bound() const { return m_u_bound_; }
    double m_u_max() const { return m_u_max_; }
    double m_u_ratio() const { return m_u_max_ / m_u_bound_; }
    std::int64_t clip_events() const { return clip_events_; }
    std::int64_t steps() const { return steps_; }

private:
    double mass_u(const State& s) const {
        const double cu = p_.chi_u();
        double sum = 0.0;
        for (std::size_t k = 0; k < s.a.size(); ++k) sum += s.a[k] * std::exp(cu * s.v[k]);
        return sum * g_.cell_area();
    }

    Parameters p_;
    Grid g_;
    std::vector<double> prev_v_;
    double m_u_bound_ = 0.0;
    double m_u_max_ = 0.0;
    double v_max_increase_ = 0.0;
    std::int64_t v_increases_ = 0;
    std::int64_t clip_events_ = 0;
    std::int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Bernoulli comparison on the recorded series
// ---------------------------------------------------------------------------

struct BernoulliCheck {
    bool triggered = false;    // some sample had ||z||_inf <= mu_u / (2 rho)
    double t0 = 0.0;           // first such sample
    double a_init = 0.0;       // min-cell a at t0
    double min_margin = 0.0;   // min over later samples of min_a - bound
    std::size_t samples = 0;   // samples checked
    std::size_t violations = 0; // samples with min_a < bound - tol
};

inline BernoulliCheck bernoulli_check(std::span<const DiagnosticsRecord> records, const Parameters& p, double v0_max,
                                      double tol = 1e-6) {
    BernoulliCheck out;
    const double threshold = p.mu_u / (2.0 * p.rho);
    std::size_t start = records.size();
    for (std::size_t k = 0; k < records.size(); ++k) {
        if (records[k].z_inf <= threshold) {
            start = k;
            break;
        }
    }
    if (start == records.size()) return out;
    out.triggered = true;
    out.t0 = records[start].t;
    out.a_init = records[start].min_a;
    out.min_margin = std::numeric_limits<double>::infinity();
    if (!(out.a_init > 0.0)) {
        out.violations = records.size() - start;
        return out;
    }
    for (std::size_t k = start; k < records.size(); ++k) {
        const double bound = bernoulli_lower_bound(out.a_init, out.t0, records[k].t, p, v0_max);
        const double margin = records[k].min_a - bound;
        out.min_margin = std::fmin(out.min_margin, margin);
        if (margin < -tol) ++out.violations;
        ++out.samples;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunOutputs {
    std::vector<DiagnosticsRecord> records;
    State final_state;
    RateReport report;
};

struct RunOptions {
    std::optional<State> start;         // continue from this state instead of the initial profile
    std::filesystem::path out_dir;      // empty: write nothing
    bool write_snapshots = true;
    StepHook hook;
    std::function<void(const std::string&)> log;
};

inline std::string snapshot_name(double t) { return "snap_t" + detail::format_number(t); }

inline RunOutputs simulate(const RunConfig& cfg, const RunOptions& opt = {}) {
    cfg.validate();
    State initial = opt.start ? *opt.start : make_initial(cfg.grid, cfg.initial, cfg.params);
    const bool writing = !opt.out_dir.empty();
    const std::filesystem::path snap_dir = opt.out_dir / "snapshots";
    if (writing) {
        ensure_directory(opt.out_dir);
        write_text(opt.out_dir / "resolved.cfg", resolved_config(cfg));
        if (opt.write_snapshots) ensure_directory(snap_dir);
    }

    RunOutputs out;
    auto sink = [&](const State& s) {
        out.records.push_back(collect(s, cfg.params, cfg.grid));
        if (writing && opt.write_snapshots) {
            for (double ts : cfg.output.snapshots) {
                if (std::fabs(s.t - ts) <= 1e-9 * std::fmax(1.0, ts)) {
                    write_snapshot(s, cfg.grid, cfg.params, snap_dir / snapshot_name(ts));
                }
            }
        }
        if (opt.log && out.records.size() % 100 == 1) {
            std::ostringstream msg;
            msg << "t=" << s.t << " M_w+M_z=" << out.records.back().M_w + out.records.back().M_z
                << " |u-1|=" << out.records.back().u_minus_1_inf;
            opt.log(msg.str());
        }
    };
    out.final_state = run(std::move(initial), cfg.params, cfg.grid, cfg.solver, sink, opt.hook);
    out.report = rate_report(out.records, cfg.params, cfg.fit, cfg.rate_tolerance);

    if (writing) {
        write_diagnostics(out.records, opt.out_dir / "diagnostics.csv");
        write_rate_report(out.report, opt.out_dir / "rate_report.json");
        if (opt.write_snapshots) write_snapshot(out.final_state, cfg.grid, cfg.params, snap_dir / "final");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Oracle comparison for spatially homogeneous runs
// ---------------------------------------------------------------------------

struct OracleComparison {
    std::vector<double> t;
    std::vector<HomogeneousStateVector> pde;
    std::vector<HomogeneousStateVector> ode;
    double max_rel_error = 0.0; // componentwise, over all samples
    double max_spread = 0.0;    // largest max - min of any field at any sample
    bool verdicts_match = true;
    std::vector<std::string> mismatches;
};

inline HomogeneousStateVector cell_state(const State& s, const Parameters& p, std::size_t k) {
    return {s.a[k] * std::exp(p.chi_u() * s.v[k]), s.v[k], s.b[k] * std::exp(p.chi_w() * s.v[k]), s.z[k]};
}

inline double relative_error(double x, double ref) {
    const double scale = std::fabs(ref);
    return scale > 0.0 ? std::fabs(x - ref) / scale : std::fabs(x);
}

inline double max_relative_error(const HomogeneousStateVector& x, const HomogeneousStateVector& ref) {
    return std::fmax(std::fmax(relative_error(x.u, ref.u), relative_error(x.v, ref.v)),
                     std::fmax(relative_error(x.w, ref.w), relative_error(x.z, ref.z)));
}

/// Runs the PDE from a homogeneous profile, integrates the ODE reduction
/// with RK4 at a much finer step, and compares at every sample.
inline OracleComparison oracle_compare(const RunConfig& cfg, double ode_dt = 0.0) {
    if (cfg.initial.kind != InitialProfile::Kind::homogeneous) {
        throw ConfigError("oracle needs initial.profile = homogeneous");
    }
    const Parameters& p = cfg.params;
    const Grid& g = cfg.grid;
    const HomogeneousStateVector y0{cfg.initial.u.base, cfg.initial.v.base, cfg.initial.w.base, cfg.initial.z.base};

    OracleComparison cmp;
    std::vector<DiagnosticsRecord> pde_records;
    auto sink = [&](const State& s) {
        cmp.t.push_back(s.t);
        cmp.pde.push_back(cell_state(s, p, 0));
        pde_records.push_back(collect(s, p, g));
        for (const Field* f : {&s.a, &s.b, &s.v, &s.z}) cmp.max_spread = std::fmax(cmp.max_spread, f->max() - f->min());
    };
    run(make_initial(g, cfg.initial, p), p, g, cfg.solver, sink);

    if (!(ode_dt > 0.0)) ode_dt = std::fmin(1e-3, ode_oracle_dt_bound(y0, p));
    std::vector<DiagnosticsRecord> ode_records;
    for (double t : cmp.t) {
        const HomogeneousStateVector y = t > 0.0 ? ode_oracle(y0, p, t, ode_dt).states.back() : y0;
        cmp.ode.push_back(y);
        Field u(g, Quantity::u, y.u), v(g, Quantity::v, y.v), w(g, Quantity::w, y.w), z(g, Quantity::z, y.z);
        auto [a, b] = transform_to_ab(u, w, v, p);
        const State s{t, std::move(a), std::move(b), std::move(v), std::move(z), 0, 0};
        ode_records.push_back(collect(s, p, g));
    }
    for (std::size_t k = 0; k < cmp.t.size(); ++k) {
        cmp.max_rel_error = std::fmax(cmp.max_rel_error, max_relative_error(cmp.pde[k], cmp.ode[k]));
    }

    const RateReport rp = rate_report(pde_records, p, cfg.fit, cfg.rate_tolerance);
    const RateReport ro = rate_report(ode_records, p, cfg.fit, cfg.rate_tolerance);
    for (std::size_t k = 0; k < rp.entries.size(); ++k) {
        if (rp.entries[k].status != ro.entries[k].status) {
            cmp.verdicts_match = false;
            cmp.mismatches.push_back(rp.entries[k].quantity + ": pde " + std::string(to_string(rp.entries[k].status)) +
                                     ", ode " + std::string(to_string(ro.entries[k].status)));
        }
    }
    return cmp;
}

// ---------------------------------------------------------------------------
// Beta sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    double beta = 0.0;
    double delta = 0.0;       // min{1 - beta, delta_z}
    double linear_rate = 0.0; // slowest rate of the linearization at (1, 0, 0, 0)
    std::optional<DecayFit> fit;
    double rel_error = 0.0;   // |rate - delta| / delta, beta < 1 only
    std::string status;       // within-tolerance | outside-tolerance | no-decay | decays | fit-error
    std::string note;
};

// Rates at or below this count as "no positive decay" for beta >= 1; it is
// the scale of least-squares noise on a flat series over the default window.
inline constexpr double sweep_noise_rate = 1e-3;

inline SweepRow sweep_one(const RunConfig& base, double beta, const std::filesystem::path& out_dir) {
    RunConfig cfg = base;
    cfg.params.beta = beta;
    SweepRow row;
    row.beta = beta;
    row.delta = cfg.params.mass_decay_rate();
    row.linear_rate = linearized_mass_decay_rate(cfg.params);
    RunOptions opt;
    opt.out_dir = out_dir;
    opt.write_snapshots = false;
    const RunOutputs res = simulate(cfg, opt);
    std::vector<double> t, m;
    for (const auto& r : res.records) {
        t.push_back(r.t);
        m.push_back(r.M_w + r.M_z);
    }
    const auto [lo, hi] = cfg.fit.resolve(res.records.back().t);
    try {
        row.fit = fit_decay(t, m, lo, hi, "M_w+M_z");
    } catch (const FitError& e) {
        row.status = "fit-error";
        row.note = e.what();
        return row;
    }
    if (cfg.params.convergence_regime()) {
        row.rel_error = std::fabs(row.fit->rate - row.delta) / row.delta;
        row.status = row.rel_error <= cfg.rate_tolerance ? "within-tolerance" : "outside-tolerance";
    } else {
        row.status = row.fit->rate <= sweep_noise_rate ? "no-decay" : "decays";
    }
    return row;
}

inline std::string sweep_dir_name(double beta) { return "beta_" + detail::format_number(beta); }

/// One independent run per beta. With parallel set, runs execute
/// concurrently; results come back in input order either way.
inline std::vector<SweepRow> sweep(const RunConfig& base, std::span<const double> betas,
                                   const std::filesystem::path& out_dir, bool parallel = false) {
    std::vector<SweepRow> rows;
    auto dir_for = [&](double b) { return out_dir.empty() ? std::filesystem::path{} : out_dir / sweep_dir_name(b); };
    if (!parallel) {
        for (double b : betas) rows.push_back(sweep_one(base, b, dir_for(b)));
        return rows;
    }
    std::vector<std::future<SweepRow>> jobs;
    for (double b : betas) jobs.push_back(std::async(std::launch::async, [&base, b, d = dir_for(b)] {
        return sweep_one(base, b, d);
    }));
    for (auto& j : jobs) rows.push_back(j.get());
    return rows;
}

inline void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ostringstream o;
    o << "beta,delta,linear_rate,fitted_rate,r_squared,rel_error,status\n";
    for (const auto& r : rows) {
        o << detail::format_number(r.beta) << ',' << detail::format_number(r.delta) << ','
          << detail::format_number(r.linear_rate) << ',' << (r.fit ? detail::format_number(r.fit->rate) : "nan") << ','
          << (r.fit ? detail::format_number(r.fit->r_squared) : "nan") << ',' << detail::format_number(r.rel_error)
          << ',' << r.status << '\n';
    }
    write_text(path, o.str());
}

// ---------------------------------------------------------------------------
// Grid comparisons
// ---------------------------------------------------------------------------

/// Averages 2x2 blocks of a field on (2n x 2m) cells down to (n x m).
inline Field restrict2(const Field& fine) {
    if (fine.nx() % 2 || fine.ny() % 2) throw DimensionError("restrict2: grid size must be even");
    Field coarse(fine.nx() / 2, fine.ny() / 2, fine.quantity());
    for (int j = 0; j < coarse.ny(); ++j) {
        for (int i = 0; i < coarse.nx(); ++i) {
            coarse(i, j) = 0.25 * (fine(2 * i, 2 * j) + fine(2 * i + 1, 2 * j) + fine(2 * i, 2 * j + 1) +
                                   fine(2 * i + 1, 2 * j + 1));
        }
    }
    return coarse;
}

inline double l2_distance(const Field& x, const Field& y, const Grid& g) {
    require_same_shape(x, y, "l2_distance");
    require_on_grid(x, g, "l2_distance");
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    return std::sqrt(s * g.cell_area());
}

inline Field physical_u(const State& s, const Parameters& p) { return s.physical(p).first; }

/// L2 distance between the transformed and direct solutions for u at t_end.
inline double cross_scheme_distance(RunConfig cfg) {
    cfg.solver.scheme = Scheme::transformed;
    const State st = run(make_initial(cfg.grid, cfg.initial, cfg.params), cfg.params, cfg.grid, cfg.solver);
    cfg.solver.scheme = Scheme::direct;
    const State sd = run(make_initial(cfg.grid, cfg.initial, cfg.params), cfg.params, cfg.grid, cfg.solver);
    return l2_distance(physical_u(st, cfg.params), physical_u(sd, cfg.params), cfg.grid);
}

struct SelfConvergence {
    std::vector<int> sizes;      // n/4, n/2, n
    std::vector<double> diffs;   // ||R u_{2h->h} - u_h|| for consecutive pairs
    double observed_order = 0.0; // log2(diffs[0] / diffs[1])
};

/// Solutions for u on three nested grids; differences are measured on the
/// coarser grid of each pair after 2x2 block averaging.
inline SelfConvergence self_convergence(RunConfig cfg) {
    SelfConvergence out;
    const int nx = cfg.grid.nx, ny = cfg.grid.ny;
    if (nx % 4 || ny % 4 || nx < 16 || ny < 16) throw ConfigError("self-convergence needs nx, ny divisible by 4 and >= 16");
    std::vector<Field> us;
    std::vector<Grid> gs;
    for (int f : {4, 2, 1}) {
        cfg.grid.nx = nx / f;
        cfg.grid.ny = ny / f;
        out.sizes.push_back(cfg.grid.nx);
        gs.push_back(cfg.grid);
        const State s = run(make_initial(cfg.grid, cfg.initial, cfg.params), cfg.params, cfg.grid, cfg.solver);
        us.push_back(physical_u(s, cfg.params));
    }
    for (int k = 0; k < 2; ++k) out.diffs.push_back(l2_distance(restrict2(us[k + 1]), us[k], gs[k]));
    out.observed_order = std::log2(out.diffs[0] / out.diffs[1]);
    return out;
}

} // namespace ovsim
