#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ovsim/diagnostics.hpp"
#include "ovsim/errors.hpp"
#include "ovsim/grid.hpp"
#include "ovsim/parameters.hpp"
#include "ovsim/solver.hpp"

namespace ovsim {

// Config grammar: INI sections of `key = value` lines, `#` or `;` comments.
//
//   [parameters]  D_u D_w D_z xi_u xi_w mu_u rho alpha_u alpha_w delta_z beta
//   [grid]        nx ny Lx Ly
//   [solver]      scheme cfl_safety t_end cadence clip_tolerance dt
//   [initial]     profile (canonical | equilibrium | homogeneous | cosine)
//                 u v w z                       homogeneous levels
//                 u_base u_amp u_kx u_ky, ...   cosine modes
//   [output]      dir snapshots (comma list of times)
//   [fit]         t_lo t_hi (number or auto) tolerance
//
// Comments go on their own line. Every key is optional; see RunConfig for
// defaults. A homogeneous profile without levels starts at
// (u, v, w, z) = (0.5, 0.5, 0.2, 0.3).

struct OutputConfig {
    std::string dir = "out";
    std::vector<double> snapshots; // times at which full fields are written; the final state always is

    friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct RunConfig {
    Parameters params;
    Grid grid{128, 128, 1.0, 1.0};
    SolverConfig solver{0.4, 40.0, 0.1, Scheme::transformed, 1e-12, 0.0};
    InitialProfile initial = InitialProfile::canonical();
    OutputConfig output;
    FitWindow fit;
    double rate_tolerance = 0.05;

    /// Throws ConfigError naming the violated invariant.
    void validate() const {
        try {
            params.validate();
            grid.validate();
        } catch (const DomainError& e) {
            throw ConfigError(e.what());
        }
        solver.validate();
        if (fit.t_lo && fit.t_hi && !(*fit.t_lo < *fit.t_hi)) throw ConfigError("fit.t_lo must be below fit.t_hi");
        if (!(rate_tolerance >= 0.0 && rate_tolerance < 1.0)) throw ConfigError("fit.tolerance must be in [0, 1)");
        for (double t : output.snapshots) {
            if (!(t >= 0.0) || t > solver.t_end) throw ConfigError("output.snapshots must lie in [0, t_end]");
            const double k = std::round(t / solver.cadence);
            if (std::fabs(k * solver.cadence - t) > 1e-9 * std::fmax(1.0, t)) {
                throw ConfigError("output.snapshots must be multiples of solver.cadence");
            }
        }
        for (const CosineMode* m : {&initial.u, &initial.v, &initial.w, &initial.z}) {
            if (!std::isfinite(m->base) || !std::isfinite(m->amp) || m->base - std::fabs(m->amp) < 0.0) {
                throw ConfigError("initial profile must satisfy base - |amp| >= 0");
            }
            if (m->kx < 0 || m->ky < 0) throw ConfigError("initial wave numbers must be nonnegative");
        }
    }
};

namespace detail {

inline std::string format_number(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view text, std::string_view key) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw ConfigError(std::string(key) + ": expected a decimal number, got '" + std::string(text) + "'");
    }
    return v;
}

inline int parse_int(std::string_view text, std::string_view key) {
    const double v = parse_number(text, key);
    if (v != std::floor(v) || std::fabs(v) > 1e9) {
        throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(text) + "'");
    }
    return static_cast<int>(v);
}

inline std::vector<double> parse_list(std::string_view text, std::string_view key) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string_view item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
        if (item.find_first_not_of(" \t\r") != std::string_view::npos) out.push_back(parse_number(item, key));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline InitialProfile::Kind parse_profile(std::string_view s) {
    if (s == "canonical") return InitialProfile::Kind::canonical;
    if (s == "equilibrium") return InitialProfile::Kind::equilibrium;
    if (s == "homogeneous") return InitialProfile::Kind::homogeneous;
    if (s == "cosine") return InitialProfile::Kind::cosine;
    throw ConfigError("initial.profile: unknown profile '" + std::string(s) + "'");
}

} // namespace detail

/// Parses a config document. Unknown sections or keys are errors naming the
/// key; values are validated after defaults are applied.
inline RunConfig parse_config_string(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
    }

    RunConfig cfg;
    std::map<std::string, std::string> initial_keys;

    for (const auto& [section, body] : tree) {
        if (!body.data().empty()) throw ConfigError("key '" + section + "' must be inside a section");
        for (const auto& [key, node] : body) {
            const std::string full = section + "." + key;
            const std::string value = node.get_value<std::string>();
            auto num = [&] { return detail::parse_number(value, full); };

            if (section == "parameters") {
                Parameters& p = cfg.params;
                double* slot = nullptr;
                for (auto [name, ptr] : {std::pair{"D_u", &p.D_u}, {"D_w", &p.D_w}, {"D_z", &p.D_z}, {"xi_u", &p.xi_u},
                                         {"xi_w", &p.xi_w}, {"mu_u", &p.mu_u}, {"rho", &p.rho},
                                         {"alpha_u", &p.alpha_u}, {"alpha_w", &p.alpha_w},
                                         {"delta_z", &p.delta_z}, {"beta", &p.beta}}) {
                    if (key == name) slot = ptr;
                }
                if (!slot) throw ConfigError("unknown key '" + full + "'");
                *slot = num();
            } else if (section == "grid") {
                if (key == "nx") cfg.grid.nx = detail::parse_int(value, full);
                else if (key == "ny") cfg.grid.ny = detail::parse_int(value, full);
                else if (key == "Lx") cfg.grid.Lx = num();
                else if (key == "Ly") cfg.grid.Ly = num();
                else throw ConfigError("unknown key '" + full + "'");
            } else if (section == "solver") {
                if (key == "scheme") cfg.solver.scheme = parse_scheme(value);
                else if (key == "cfl_safety") cfg.solver.cfl_safety = num();
                else if (key == "t_end") cfg.solver.t_end = num();
                else if (key == "cadence") cfg.solver.cadence = num();
                else if (key == "clip_tolerance") cfg.solver.clip_tolerance = num();
                else if (key == "dt") cfg.solver.fixed_dt = num();
                else throw ConfigError("unknown key '" + full + "'");
            } else if (section == "initial") {
                initial_keys[key] = value;
            } else if (section == "output") {
                if (key == "dir") cfg.output.dir = value;
                else if (key == "snapshots") cfg.output.snapshots = detail::parse_list(value, full);
                else throw ConfigError("unknown key '" + full + "'");
            } else if (section == "fit") {
                if (key == "t_lo") cfg.fit.t_lo = value == "auto" ? std::nullopt : std::optional<double>(num());
                else if (key == "t_hi") cfg.fit.t_hi = value == "auto" ? std::nullopt : std::optional<double>(num());
                else if (key == "tolerance") cfg.rate_tolerance = num();
                else throw ConfigError("unknown key '" + full + "'");
            } else {
                throw ConfigError("unknown section '[" + section + "]'");
            }
        }
    }

    // Initial profile: the kind decides which keys are meaningful.
    InitialProfile::Kind kind = InitialProfile::Kind::canonical;
    if (auto it = initial_keys.find("profile"); it != initial_keys.end()) {
        kind = detail::parse_profile(it->second);
        initial_keys.erase(it);
    }
    switch (kind) {
    case InitialProfile::Kind::canonical: cfg.initial = InitialProfile::canonical(); break;
    case InitialProfile::Kind::equilibrium: cfg.initial = InitialProfile::equilibrium(); break;
    case InitialProfile::Kind::homogeneous: cfg.initial = InitialProfile::homogeneous(0.5, 0.5, 0.2, 0.3); break;
    case InitialProfile::Kind::cosine: {
        cfg.initial = InitialProfile::canonical();
        cfg.initial.kind = InitialProfile::Kind::cosine;
        break;
    }
    }
    const std::pair<const char*, CosineMode*> modes[] = {
        {"u", &cfg.initial.u}, {"v", &cfg.initial.v}, {"w", &cfg.initial.w}, {"z", &cfg.initial.z}};
    for (const auto& [key, value] : initial_keys) {
        const std::string full = "initial." + key;
        bool used = false;
        for (auto [name, mode] : modes) {
            const std::string n = name;
            if (kind == InitialProfile::Kind::homogeneous && key == n) {
                mode->base = detail::parse_number(value, full);
                used = true;
            } else if (kind == InitialProfile::Kind::cosine) {
                if (key == n + "_base") mode->base = detail::parse_number(value, full), used = true;
                else if (key == n + "_amp") mode->amp = detail::parse_number(value, full), used = true;
                else if (key == n + "_kx") mode->kx = detail::parse_int(value, full), used = true;
                else if (key == n + "_ky") mode->ky = detail::parse_int(value, full), used = true;
            }
        }
        if (!used) {
            throw ConfigError("unknown key '" + full + "' for profile " + std::string(to_string(kind)));
        }
    }

    cfg.validate();
    return cfg;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_string(ss.str());
}

/// The fully resolved config in the same grammar. Parsing the result gives
/// back an equal RunConfig.
inline std::string resolved_config(const RunConfig& c) {
    using detail::format_number;
    std::ostringstream o;
    o << "# resolved configuration (all defaults filled in)\n\n[parameters]\n";
    for (const auto& [name, value] : c.params.named()) o << name << " = " << format_number(value) << "\n";
    o << "\n[grid]\nnx = " << c.grid.nx << "\nny = " << c.grid.ny << "\nLx = " << format_number(c.grid.Lx)
      << "\nLy = " << format_number(c.grid.Ly) << "\n";
    o << "\n[solver]\nscheme = " << to_string(c.solver.scheme) << "\ncfl_safety = " << format_number(c.solver.cfl_safety)
      << "\nt_end = " << format_number(c.solver.t_end) << "\ncadence = " << format_number(c.solver.cadence)
      << "\nclip_tolerance = " << format_number(c.solver.clip_tolerance)
      << "\ndt = " << format_number(c.solver.fixed_dt) << "\n";
    o << "\n[initial]\nprofile = " << to_string(c.initial.kind) << "\n";
    const std::pair<const char*, const CosineMode*> modes[] = {
        {"u", &c.initial.u}, {"v", &c.initial.v}, {"w", &c.initial.w}, {"z", &c.initial.z}};
    for (auto [name, m] : modes) {
        if (c.initial.kind == InitialProfile::Kind::homogeneous) {
            o << name << " = " << format_number(m->base) << "\n";
        } else if (c.initial.kind == InitialProfile::Kind::cosine) {
            o << name << "_base = " << format_number(m->base) << "\n" << name << "_amp = " << format_number(m->amp)
              << "\n" << name << "_kx = " << m->kx << "\n" << name << "_ky = " << m->ky << "\n";
        }
    }
    o << "\n[output]\ndir = " << c.output.dir << "\nsnapshots = ";
    for (std::size_t k = 0; k < c.output.snapshots.size(); ++k) {
        o << (k ? ", " : "") << format_number(c.output.snapshots[k]);
    }
    o << "\n\n[fit]\nt_lo = " << (c.fit.t_lo ? format_number(*c.fit.t_lo) : "auto")
      << "\nt_hi = " << (c.fit.t_hi ? format_number(*c.fit.t_hi) : "auto")
      << "\ntolerance = " << format_number(c.rate_tolerance) << "\n";
    return o.str();
}

inline bool operator==(const RunConfig& l, const RunConfig& r) {
    auto solver_eq = [](const SolverConfig& a, const SolverConfig& b) {
        return a.cfl_safety == b.cfl_safety && a.t_end == b.t_end && a.cadence == b.cadence && a.scheme == b.scheme &&
               a.clip_tolerance == b.clip_tolerance && a.fixed_dt == b.fixed_dt;
    };
    auto params_eq = [](const Parameters& a, const Parameters& b) { return a.named() == b.named(); };
    return params_eq(l.params, r.params) && l.grid == r.grid && solver_eq(l.solver, r.solver) &&
           l.initial == r.initial && l.output == r.output && l.fit.t_lo == r.fit.t_lo && l.fit.t_hi == r.fit.t_hi &&
           l.rate_tolerance == r.rate_tolerance;
}

} // namespace ovsim
