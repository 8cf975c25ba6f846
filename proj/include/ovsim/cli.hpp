#pragma once

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ovsim/app.hpp"
#include "ovsim/config.hpp"
#include "ovsim/errors.hpp"
#include "ovsim/io.hpp"

namespace ovsim {

enum ExitCode : int { exit_ok = 0, exit_numerical = 1, exit_usage = 2, exit_io = 3 };

inline int exit_code_for(ErrorKind k) {
    switch (k) {
    case ErrorKind::config: return exit_usage;
    case ErrorKind::io: return exit_io;
    default: return exit_numerical;
    }
}

inline std::string_view category(ErrorKind k) {
    switch (k) {
    case ErrorKind::config: return "config error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::step: return "stability error";
    case ErrorKind::positivity: return "positivity error";
    case ErrorKind::fit: return "fit error";
    default: return "numerical error";
    }
}

namespace detail {

// "128x64" or "128" (square).
inline std::pair<int, int> parse_grid_flag(const std::string& s) {
    const auto x = s.find_first_of("xX");
    if (x == std::string::npos) {
        const int n = parse_int(s, "--grid");
        return {n, n};
    }
    return {parse_int(s.substr(0, x), "--grid"), parse_int(s.substr(x + 1), "--grid")};
}

struct Overrides {
    std::optional<std::string> out;
    std::optional<double> cadence;
    std::optional<std::string> scheme;
    std::optional<std::string> grid;
    std::optional<double> t_end;
    std::optional<double> beta;

    void attach(CLI::App* cmd, bool with_beta) {
        cmd->add_option("--out", out, "output directory (overrides output.dir)");
        cmd->add_option("--cadence", cadence, "diagnostics interval");
        cmd->add_option("--scheme", scheme, "transformed | direct");
        cmd->add_option("--grid", grid, "NxM cells");
        cmd->add_option("--t-end", t_end, "final time");
        if (with_beta) cmd->add_option("--beta", beta, "burst size");
    }

    void apply(RunConfig& c) const {
        if (out) c.output.dir = *out;
        if (cadence) c.solver.cadence = *cadence;
        if (scheme) c.solver.scheme = parse_scheme(*scheme);
        if (grid) std::tie(c.grid.nx, c.grid.ny) = parse_grid_flag(*grid);
        if (t_end) c.solver.t_end = *t_end;
        if (beta) c.params.beta = *beta;
        // Snapshot times beyond a shortened run are dropped rather than rejected.
        std::erase_if(c.output.snapshots, [&](double t) { return t > c.solver.t_end; });
        c.validate();
    }
};

inline std::string fmt(double x) {
    std::ostringstream o;
    o << std::setprecision(6) << x;
    return o.str();
}

inline void print_report(const RateReport& rep, std::ostream& out) {
    out << "fit window [" << fmt(rep.t_lo) << ", " << fmt(rep.t_hi) << "], tolerance " << fmt(rep.tolerance) << "\n";
    for (const auto& e : rep.entries) {
        out << "  " << std::left << std::setw(14) << e.quantity << " rate "
            << std::setw(12) << (e.fit ? fmt(e.fit->rate) : "-") << " r2 " << std::setw(10)
            << (e.fit ? fmt(e.fit->r_squared) : "-") << " bound " << std::setw(22)
            << (e.bound_name + "=" + fmt(e.bound)) << " " << to_string(e.status) << "\n";
    }
    for (const auto& w : rep.warnings) out << "  warning: " << w << "\n";
}

} // namespace detail

inline int cmd_run(const RunConfig& cfg, const std::optional<std::string>& from, std::ostream& out) {
    RunOptions opt;
    opt.out_dir = cfg.output.dir;
    if (from) {
        Snapshot snap = read_snapshot(*from);
        if (snap.parameter_hash != cfg.params.hash()) throw ConfigError("snapshot parameters differ from the config");
        if (!(snap.grid == cfg.grid)) throw ConfigError("snapshot grid differs from the config");
        opt.start = std::move(snap.state);
    }
    opt.log = [&](const std::string& m) { out << m << "\n" << std::flush; };
    const RunOutputs res = simulate(cfg, opt);
    out << "run finished at t=" << res.final_state.t << " after " << res.final_state.step_count << " steps, "
        << res.final_state.clip_events << " clip events\n";
    detail::print_report(res.report, out);
    out << "outputs in " << cfg.output.dir << "\n";
    return exit_ok;
}

inline int cmd_oracle(const RunConfig& cfg, double tol, std::ostream& out) {
    const OracleComparison cmp = oracle_compare(cfg);
    ensure_directory(cfg.output.dir);
    write_text(std::filesystem::path(cfg.output.dir) / "resolved.cfg", resolved_config(cfg));
    std::ostringstream csv;
    csv << "t,u_pde,v_pde,w_pde,z_pde,u_ode,v_ode,w_ode,z_ode,max_rel_error\n";
    for (std::size_t k = 0; k < cmp.t.size(); ++k) {
        const auto& a = cmp.pde[k];
        const auto& b = cmp.ode[k];
        using detail::format_number;
        csv << format_number(cmp.t[k]) << ',' << format_number(a.u) << ',' << format_number(a.v) << ','
            << format_number(a.w) << ',' << format_number(a.z) << ',' << format_number(b.u) << ','
            << format_number(b.v) << ',' << format_number(b.w) << ',' << format_number(b.z) << ','
            << format_number(max_relative_error(a, b)) << '\n';
    }
    write_text(std::filesystem::path(cfg.output.dir) / "oracle.csv", csv.str());

    bool ok = true;
    auto line = [&](bool pass, const std::string& what) {
        ok = ok && pass;
        out << (pass ? "PASS " : "FAIL ") << what << "\n";
    };
    line(cmp.max_spread == 0.0, "spatial uniformity preserved (max spread " + detail::fmt(cmp.max_spread) + ")");
    line(cmp.max_rel_error <= tol,
         "PDE vs ODE max relative error " + detail::fmt(cmp.max_rel_error) + " <= " + detail::fmt(tol));
    std::string mism;
    for (const auto& m : cmp.mismatches) mism += " [" + m + "]";
    line(cmp.verdicts_match, "rate verdicts identical for PDE and ODE series" + mism);
    return ok ? exit_ok : exit_numerical;
}

inline int cmd_sweep(const RunConfig& cfg, const std::vector<double>& betas, bool parallel, std::ostream& out) {
    if (betas.empty()) throw ConfigError("sweep needs --beta with at least one value");
    for (double b : betas) {
        if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("beta must be positive");
    }
    ensure_directory(cfg.output.dir);
    write_text(std::filesystem::path(cfg.output.dir) / "resolved.cfg", resolved_config(cfg));
    const auto rows = sweep(cfg, betas, cfg.output.dir, parallel);
    write_sweep_csv(rows, std::filesystem::path(cfg.output.dir) / "sweep.csv");
    out << std::left << std::setw(8) << "beta" << std::setw(10) << "delta" << std::setw(14) << "fitted" << std::setw(12)
        << "r2" << std::setw(12) << "rel.err" << "status\n";
    for (const auto& r : rows) {
        out << std::setw(8) << detail::fmt(r.beta) << std::setw(10) << detail::fmt(r.delta) << std::setw(14)
            << (r.fit ? detail::fmt(r.fit->rate) : "-") << std::setw(12) << (r.fit ? detail::fmt(r.fit->r_squared) : "-")
            << std::setw(12) << (r.beta < 1.0 ? detail::fmt(r.rel_error) : "-") << r.status << "\n";
    }
    return exit_ok;
}

/// Invariant suite on the configured run, then a cross-scheme comparison
/// and a three-grid self-convergence study over a short horizon.
inline int cmd_verify(const RunConfig& cfg, double horizon, std::ostream& out) {
    bool ok = true;
    auto line = [&](bool pass, const std::string& what) {
        ok = ok && pass;
        out << (pass ? "PASS " : "FAIL ") << what << "\n" << std::flush;
    };

    const State initial = make_initial(cfg.grid, cfg.initial, cfg.params);
    InvariantMonitor mon(initial, cfg.params, cfg.grid);
    RunOptions opt;
    opt.out_dir = cfg.output.dir;
    opt.write_snapshots = false;
    opt.hook = mon.hook();
    const RunOutputs res = simulate(cfg, opt);
    line(res.final_state.clip_events == 0, "no clip events (" + std::to_string(res.final_state.clip_events) + ")");
    line(mon.v_increases() == 0, "v nonincreasing in every cell at every step");
    line(mon.m_u_ratio() <= 1.001, "M_u <= max{M_u(0), |Omega|} * 1.001 (ratio " + detail::fmt(mon.m_u_ratio()) + ")");
    bool e_ok = true;
    for (const auto& r : res.records) e_ok = e_ok && r.E >= 0.0;
    line(e_ok, "E >= 0 at every sample");
    const auto bern = bernoulli_check(res.records, cfg.params, initial.v.max());
    if (bern.triggered) {
        line(bern.violations == 0, "min a above the Bernoulli lower bound from t0=" + detail::fmt(bern.t0) +
                                       " (min margin " + detail::fmt(bern.min_margin) + ")");
    } else {
        out << "SKIP Bernoulli comparison: ||z||_inf never below mu_u/(2 rho)\n";
    }
    if (cfg.params.convergence_regime()) {
        detail::print_report(res.report, out);
        line(res.report.all_pass(), "rate report");
    } else {
        out << "SKIP rate report: beta >= 1\n";
    }

    RunConfig short_cfg = cfg;
    short_cfg.solver.t_end = std::fmin(horizon, cfg.solver.t_end);
    short_cfg.output.snapshots.clear();
    if (cfg.grid.nx % 4 == 0 && cfg.grid.ny % 4 == 0 && cfg.grid.nx >= 16 && cfg.grid.ny >= 16) {
        RunConfig coarse = short_cfg;
        coarse.grid.nx /= 2;
        coarse.grid.ny /= 2;
        const double d_coarse = cross_scheme_distance(coarse);
        const double d_fine = cross_scheme_distance(short_cfg);
        line(d_coarse >= 1.5 * d_fine, "cross-scheme L2(u) shrinks " + std::to_string(coarse.grid.nx) + " -> " +
                                           std::to_string(cfg.grid.nx) + ": " + detail::fmt(d_coarse) + " -> " +
                                           detail::fmt(d_fine) + " (factor " + detail::fmt(d_coarse / d_fine) + ")");
        const SelfConvergence sc = self_convergence(short_cfg);
        line(sc.observed_order >= 1.5, "self-convergence of u on " + std::to_string(sc.sizes[0]) + "/" +
                                           std::to_string(sc.sizes[1]) + "/" + std::to_string(sc.sizes[2]) +
                                           ": observed order " + detail::fmt(sc.observed_order));
    } else {
        out << "SKIP grid studies: nx, ny must be divisible by 4 and >= 16\n";
    }
    return ok ? exit_ok : exit_numerical;
}

/// Entry point. Returns the process exit code.
inline int cli_main(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"2D oncolytic virotherapy haptotaxis simulator"};
    app.require_subcommand(1);

    std::string config;
    detail::Overrides ov;
    std::optional<std::string> from;
    double oracle_tol = 1e-3;
    std::vector<double> betas;
    bool parallel = false;
    double horizon = 0.5;

    CLI::App* run_cmd = app.add_subcommand("run", "simulate and write diagnostics, snapshots, rate report");
    run_cmd->add_option("config", config, "config file")->required();
    ov.attach(run_cmd, true);
    run_cmd->add_option("--from", from, "continue from a snapshot sidecar");

    CLI::App* oracle_cmd = app.add_subcommand("oracle", "homogeneous run against the ODE reduction");
    oracle_cmd->add_option("config", config, "config file")->required();
    ov.attach(oracle_cmd, true);
    oracle_cmd->add_option("--tol", oracle_tol, "max relative error");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "independent runs per beta, fitted M_w+M_z rates");
    sweep_cmd->add_option("config", config, "config file")->required();
    ov.attach(sweep_cmd, false);
    sweep_cmd->add_option("--beta", betas, "comma-separated list")->delimiter(',')->required();
    sweep_cmd->add_flag("--parallel", parallel, "run the betas concurrently");

    CLI::App* verify_cmd = app.add_subcommand("verify", "invariant suite, cross-scheme and self-convergence");
    verify_cmd->add_option("config", config, "config file")->required();
    ov.attach(verify_cmd, true);
    verify_cmd->add_option("--horizon", horizon, "final time of the grid studies");

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n\n" << app.help();
        return exit_usage;
    }

    try {
        RunConfig cfg = parse_config(config);
        ov.apply(cfg);
        if (*run_cmd) return cmd_run(cfg, from, out);
        if (*oracle_cmd) return cmd_oracle(cfg, oracle_tol, out);
        if (*sweep_cmd) return cmd_sweep(cfg, betas, parallel, out);
        return cmd_verify(cfg, horizon, out);
    } catch (const Error& e) {
        err << category(e.kind()) << ": " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_numerical;
    }
}

inline int cli_main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cli_main(std::move(args), std::cout, std::cerr);
}

} // namespace ovsim
