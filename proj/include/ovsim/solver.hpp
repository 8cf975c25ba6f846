#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ovsim/errors.hpp"
#include "ovsim/grid.hpp"
#include "ovsim/model.hpp"
#include "ovsim/parameters.hpp"

namespace ovsim {

/// Snapshot of the transformed unknowns. u and w are never stored; they are
/// reconstructed from (a, b, v) on demand.
struct State {
    double t = 0.0;
    Field a;
    Field b;
    Field v;
    Field z;
    std::int64_t step_count = 0;
    std::int64_t clip_events = 0;

    void validate(const Grid& g) const {
        if (a.empty() || b.empty() || v.empty() || z.empty()) throw StateError("state has empty fields");
        require_on_grid(a, g, "state.a");
        require_on_grid(b, g, "state.b");
        require_on_grid(v, g, "state.v");
        require_on_grid(z, g, "state.z");
        if (!std::isfinite(t)) throw StateError("state time is not finite");
        detail::require_nonnegative(a, "a");
        detail::require_nonnegative(b, "b");
        detail::require_nonnegative(v, "v");
        detail::require_nonnegative(z, "z");
    }

    /// Physical (u, w).
    std::pair<Field, Field> physical(const Parameters& p) const { return transform_from_ab(a, b, v, p); }
};

enum class Scheme { transformed, direct };

inline std::string_view to_string(Scheme s) { return s == Scheme::transformed ? "transformed" : "direct"; }

inline Scheme parse_scheme(std::string_view s) {
    if (s == "transformed") return Scheme::transformed;
    if (s == "direct" || s == "direct-upwind") return Scheme::direct;
    throw ConfigError("unknown scheme '" + std::string(s) + "' (expected transformed or direct)");
}

struct SolverConfig {
    double cfl_safety = 0.4;
    double t_end = 1.0;
    double cadence = 0.1; // diagnostics sampling interval
    Scheme scheme = Scheme::transformed;
    double clip_tolerance = 1e-12;
    double fixed_dt = 0.0; // > 0 forces this step (still checked against the stability bound)

    void validate() const {
        if (!(cfl_safety > 0.0) || cfl_safety > 0.9) throw ConfigError("cfl_safety must be in (0, 0.9]");
        if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw ConfigError("t_end must be finite and nonnegative");
        if (!(cadence > 0.0) || !std::isfinite(cadence)) throw ConfigError("cadence must be positive");
        if (!(clip_tolerance >= 0.0)) throw ConfigError("clip_tolerance must be nonnegative");
        if (!(fixed_dt >= 0.0) || !std::isfinite(fixed_dt)) throw ConfigError("dt must be nonnegative");
    }
};

// ---------------------------------------------------------------------------
// Step-size control
// ---------------------------------------------------------------------------

/// Field maxima and largest face jumps of v that the stability bound needs.
struct StabilityStats {
    double u_max = 0.0;
    double w_max = 0.0;
    double v_max = 0.0;
    double z_max = 0.0;
    double dv_x = 0.0; // max |v_{i+1,j} - v_{i,j}|
    double dv_y = 0.0; // max |v_{i,j+1} - v_{i,j}|
};

namespace detail {

// Larger of m and x; inlines where std::fmax may become a libm call.
inline double raise(double m, double x) noexcept { return x > m ? x : m; }

inline void face_jumps(std::span<const double> v, const Grid& g, StabilityStats& st) {
    for (int j = 0; j < g.ny; ++j) {
        const std::size_t row = static_cast<std::size_t>(j) * g.nx;
        for (int i = 0; i + 1 < g.nx; ++i) st.dv_x = raise(st.dv_x, std::fabs(v[row + i + 1] - v[row + i]));
        if (j + 1 < g.ny) {
            for (int i = 0; i < g.nx; ++i) st.dv_y = raise(st.dv_y, std::fabs(v[row + g.nx + i] - v[row + i]));
        }
    }
}

// Bound on the pointwise reaction Jacobian from field maxima.
inline double reaction_rate_bound(const StabilityStats& st, const Parameters& p, Scheme scheme) {
    if (scheme == Scheme::transformed) {
        const double la = p.mu_u * (1.0 + 2.0 * st.u_max) + p.rho * st.z_max +
                          p.chi_u() * (2.0 * p.alpha_u * st.u_max + p.alpha_w * st.w_max) * st.v_max;
        const double lb = 1.0 + p.rho * st.z_max + p.chi_w() * (p.alpha_u * st.u_max + 2.0 * p.alpha_w * st.w_max) * st.v_max;
        const double lz = p.delta_z + p.rho * st.u_max;
        return std::fmax(la, std::fmax(lb, lz));
    }
    const double lu = p.mu_u * (1.0 + 2.0 * st.u_max) + p.rho * st.z_max;
    const double lw = 1.0;
    const double lz = p.delta_z + p.rho * st.u_max;
    return std::fmax(lu, std::fmax(lw, lz));
}

} // namespace detail

/// Explicit step limit for the given statistics:
///   dt = safety * min( min_fields 1 / (2 D_eff (1/hx^2 + 1/hy^2)), 1 / L )
/// For the transformed scheme D_eff = D (1 + e^{chi max|dv|}) / 2, the largest
/// possible face-weight to cell-weight ratio. The direct scheme adds the
/// upwind outflow rate 2 xi (max|dv_x| / hx^2 + max|dv_y| / hy^2).
inline double cfl_from_stats(const StabilityStats& st, const Parameters& p, const Grid& g, const SolverConfig& cfg) {
    const double k2 = 1.0 / (g.hx() * g.hx()) + 1.0 / (g.hy() * g.hy());
    double rate = 0.0;
    if (cfg.scheme == Scheme::transformed) {
        const double dv = std::fmax(st.dv_x, st.dv_y);
        const double du = p.D_u * (0.5 * (1.0 + std::exp(p.chi_u() * dv)));
        const double dw = p.D_w * (0.5 * (1.0 + std::exp(p.chi_w() * dv)));
        rate = 2.0 * std::fmax(std::fmax(du, dw), p.D_z) * k2;
    } else {
        const double adv = 2.0 * (st.dv_x / (g.hx() * g.hx()) + st.dv_y / (g.hy() * g.hy()));
        const double ru = 2.0 * p.D_u * k2 + p.xi_u * adv;
        const double rw = 2.0 * p.D_w * k2 + p.xi_w * adv;
        rate = std::fmax(std::fmax(ru, rw), 2.0 * p.D_z * k2);
    }
    const double dt_transport = 1.0 / rate;
    const double dt_reaction = 1.0 / detail::reaction_rate_bound(st, p, cfg.scheme);
    return cfg.cfl_safety * std::fmin(dt_transport, dt_reaction);
}

inline StabilityStats stability_stats(const State& s, const Parameters& p, const Grid& g) {
    StabilityStats st;
    const double cu = p.chi_u();
    const double cw = p.chi_w();
    for (std::size_t k = 0; k < g.size(); ++k) {
        st.u_max = detail::raise(st.u_max, s.a[k] * std::exp(cu * s.v[k]));
        st.w_max = detail::raise(st.w_max, s.b[k] * std::exp(cw * s.v[k]));
        st.v_max = detail::raise(st.v_max, s.v[k]);
        st.z_max = detail::raise(st.z_max, s.z[k]);
    }
    detail::face_jumps(s.v.values(), g, st);
    return st;
}

inline double cfl_dt(const Parameters& p, const Grid& g, const State& s, const SolverConfig& cfg) {
    s.validate(g);
    return cfl_from_stats(stability_stats(s, p, g), p, g, cfg);
}

// ---------------------------------------------------------------------------
// Steppers
// ---------------------------------------------------------------------------

namespace detail {

// Clamps values in [-tol, 0) to zero; anything lower aborts the step.
inline std::int64_t enforce_nonnegative(std::span<double> f, const Grid& g, double tol, const char* name) {
    std::int64_t clipped = 0;
    for (std::size_t k = 0; k < f.size(); ++k) {
        if (f[k] >= 0.0) continue;
        if (f[k] >= -tol) {
            f[k] = 0.0;
            ++clipped;
            continue;
        }
        const int i = static_cast<int>(k % static_cast<std::size_t>(g.nx));
        const int j = static_cast<int>(k / static_cast<std::size_t>(g.nx));
        throw PositivityError(std::string(name) + " went negative (" + std::to_string(f[k]) + ") at cell (" +
                              std::to_string(i) + ", " + std::to_string(j) + ")");
    }
    return clipped;
}

inline void check_dt(double dt, double limit) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw StepError("dt must be positive, got " + std::to_string(dt));
    if (dt > limit * (1.0 + 1e-12)) {
        throw StepError("dt=" + std::to_string(dt) + " exceeds the stability limit " + std::to_string(limit));
    }
}

} // namespace detail

namespace detail {

// e^x, with a degree-6 Taylor polynomial for |x| < 2^-8 (truncation below
// 1e-19) and std::exp otherwise. The ECM decay factor is almost always in
// the short branch.
inline double exp_small(double x) noexcept {
    if (std::fabs(x) < 0.00390625) {
        return 1.0 + x * (1.0 + x * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x * (1.0 / 720.0))))));
    }
    return std::exp(x);
}

} // namespace detail

namespace detail {

// Inputs of the fused a/b/z update. Face and reaction expressions match
// diffusion_kernel and detail::reaction_f/g term for term.
struct TransformedKernel {
    const double* a;
    const double* b;
    const double* z;
    const double* vn; // v after the decay step
    const double* eu; // e^{chi_u vn}
    const double* ew; // e^{chi_w vn}
    const double* u;  // u, w before the decay step
    const double* w;
    double* an;
    double* bn;
    double* zn;
    double cax, cay, cbx, cby, czx, czy;
    double mu, rho, chi_u, chi_w, alpha_u, alpha_w, delta_z, beta, dt;

    void update(std::size_t c, double la, double lb, double lz) const {
        const double ac = a[c], bc = b[c], zc = z[c], vc = vn[c], euc = eu[c], ewc = ew[c];
        const double un = ac * euc; // u at the new v
        const double f = mu * ac * (1.0 - un) - rho * ac * zc + chi_u * ac * (alpha_u * un + alpha_w * bc * ewc) * vc;
        const double gr =
            -bc + rho * ac * zc * (euc / ewc) + chi_w * bc * (alpha_u * ac * euc + alpha_w * bc * ewc) * vc;
        an[c] = ac + dt * (la / euc + f);
        bn[c] = bc + dt * (lb / ewc + gr);
        zn[c] = zc + dt * (lz + (-delta_z * zc - rho * u[c] * zc + beta * w[c]));
    }

    // Cell touching the boundary: faces toward missing neighbours carry no flux.
    void edge(int i, int j, int nx, int ny) const {
        const std::size_t c = static_cast<std::size_t>(j) * nx + i;
        double la = 0.0, lb = 0.0, lz = 0.0;
        auto add = [&](std::size_t m, double ca, double cb, double cz) {
            la += (ca * (0.5 * (eu[c] + eu[m]))) * (a[m] - a[c]);
            lb += (cb * (0.5 * (ew[c] + ew[m]))) * (b[m] - b[c]);
            lz += (cz * 1.0) * (z[m] - z[c]);
        };
        if (i > 0) add(c - 1, cax, cbx, czx);
        if (i < nx - 1) add(c + 1, cax, cbx, czx);
        if (j > 0) add(c - nx, cay, cby, czy);
        if (j < ny - 1) add(c + nx, cay, cby, czy);
        update(c, la, lb, lz);
    }

    // Cells lo..hi-1 of one row, none on the boundary.
    void interior(std::size_t lo, std::size_t hi, std::size_t nx) const {
        interior_impl(a + lo, b + lo, z + lo, vn + lo, eu + lo, ew + lo, u + lo, w + lo, an + lo, bn + lo, zn + lo,
                      static_cast<std::ptrdiff_t>(hi - lo), static_cast<std::ptrdiff_t>(nx));
    }

private:
    // Restrict-qualified parameters (rather than locals) so the compiler
    // can vectorize without runtime alias checks.
    void interior_impl(const double* __restrict pa, const double* __restrict pb, const double* __restrict pz,
                       const double* __restrict pv, const double* __restrict peu, const double* __restrict pew,
                       const double* __restrict pu, const double* __restrict pw, double* __restrict oa,
                       double* __restrict ob, double* __restrict oz, std::ptrdiff_t len, std::ptrdiff_t s) const {
        const double kax = cax, kay = cay, kbx = cbx, kby = cby, kzx = czx, kzy = czy;
        const double kmu = mu, krho = rho, kcu = chi_u, kcw = chi_w, kau = alpha_u, kaw = alpha_w;
        const double kdz = delta_z, kbeta = beta, h = dt;
        for (std::ptrdiff_t c = 0; c < len; ++c) {
            const std::ptrdiff_t cw = c - 1, ce = c + 1, cs = c - s, cn = c + s;
            const double euc = peu[c], ewc = pew[c], ac = pa[c], bc = pb[c], zc = pz[c], vc = pv[c];
            const double la = (kax * (0.5 * (euc + peu[cw]))) * (pa[cw] - ac) +
                              (kax * (0.5 * (euc + peu[ce]))) * (pa[ce] - ac) +
                              (kay * (0.5 * (euc + peu[cs]))) * (pa[cs] - ac) +
                              (kay * (0.5 * (euc + peu[cn]))) * (pa[cn] - ac);
            const double lb = (kbx * (0.5 * (ewc + pew[cw]))) * (pb[cw] - bc) +
                              (kbx * (0.5 * (ewc + pew[ce]))) * (pb[ce] - bc) +
                              (kby * (0.5 * (ewc + pew[cs]))) * (pb[cs] - bc) +
                              (kby * (0.5 * (ewc + pew[cn]))) * (pb[cn] - bc);
            const double lz = (kzx * 1.0) * (pz[cw] - zc) + (kzx * 1.0) * (pz[ce] - zc) +
                              (kzy * 1.0) * (pz[cs] - zc) + (kzy * 1.0) * (pz[cn] - zc);
            const double un = ac * euc;
            const double f = kmu * ac * (1.0 - un) - krho * ac * zc + kcu * ac * (kau * un + kaw * bc * ewc) * vc;
            const double gr =
                -bc + krho * ac * zc * (euc / ewc) + kcw * bc * (kau * ac * euc + kaw * bc * ewc) * vc;
            oa[c] = ac + h * (la / euc + f);
            ob[c] = bc + h * (lb / ewc + gr);
            oz[c] = zc + h * (lz + (-kdz * zc - krho * pu[c] * zc + kbeta * pw[c]));
        }
    }
};

} // namespace detail

/// First-order split step of the transformed system, in the fixed order
///   1. (u, w) reconstructed from (a, b, v)
///   2. v <- v exp(-(alpha_u u + alpha_w w) dt)          (exact, monotone)
///   3. a <- a + dt [D_u e^{-chi_u v} div(e^{chi_u v} grad a) + f]
///   4. b <- b + dt [D_w e^{-chi_w v} div(e^{chi_w v} grad b) + g]
///   5. z <- z + dt [D_z Lap z - delta_z z - rho u z + beta w]
/// Steps 3-4 use the updated v; step 5 uses the (u, w) of step 1.
///
/// The stepper caches e^{chi v} for the bound state and the statistics for
/// the next stability bound, so a step costs two or three exponentials per
/// cell (two when chi_u == chi_w).
class TransformedStepper {
public:
    TransformedStepper(const Parameters& p, const Grid& g)
        : p_(p), g_(g), chi_u_(p.chi_u()), chi_w_(p.chi_w()), shared_weight_(p.chi_u() == p.chi_w()) {
        const std::size_t n = g.size();
        for (auto* buf : {&eu_, &ew_, &eu_next_, &ew_next_, &u_, &w_, &a_next_, &b_next_, &v_next_, &z_next_}) {
            buf->assign(n, 0.0);
        }
    }

    /// Recomputes the cached weights from s.v. Required before the first
    /// advance and whenever the state was modified externally.
    void bind(const State& s) {
        for (std::size_t k = 0; k < g_.size(); ++k) {
            eu_[k] = std::exp(chi_u_ * s.v[k]);
            ew_[k] = shared_weight_ ? eu_[k] : std::exp(chi_w_ * s.v[k]);
        }
        stats_ = {};
        for (std::size_t k = 0; k < g_.size(); ++k) {
            stats_.u_max = detail::raise(stats_.u_max, s.a[k] * eu_[k]);
            stats_.w_max = detail::raise(stats_.w_max, s.b[k] * ew_[k]);
            stats_.v_max = detail::raise(stats_.v_max, s.v[k]);
            stats_.z_max = detail::raise(stats_.z_max, s.z[k]);
        }
        detail::face_jumps(s.v.values(), g_, stats_);
    }

    const StabilityStats& stats() const noexcept { return stats_; }

    void advance(State& s, double dt, double clip_tolerance) {
        const Parameters& p = p_;
        const int nx = g_.nx;
        const int ny = g_.ny;
        const std::size_t n = g_.size();

        const double* a = s.a.values().data();
        const double* b = s.b.values().data();
        const double* v = s.v.values().data();
        const double* z = s.z.values().data();

        // 1-2: physical densities at the old v, exact ECM decay, new weights.
        for (std::size_t k = 0; k < n; ++k) {
            u_[k] = a[k] * eu_[k];
            w_[k] = b[k] * ew_[k];
            const double vn = v[k] * detail::exp_small(-(p.alpha_u * u_[k] + p.alpha_w * w_[k]) * dt);
            v_next_[k] = vn;
            eu_next_[k] = std::exp(chi_u_ * vn);
            ew_next_[k] = shared_weight_ ? eu_next_[k] : std::exp(chi_w_ * vn);
        }

        // 3-5: fused stencil sweep.
        const double ihx2 = 1.0 / (g_.hx() * g_.hx());
        const double ihy2 = 1.0 / (g_.hy() * g_.hy());
        const detail::TransformedKernel kern{a, b, z, v_next_.data(), eu_next_.data(), ew_next_.data(), u_.data(),
                                             w_.data(), a_next_.data(), b_next_.data(), z_next_.data(),
                                             p.D_u * ihx2, p.D_u * ihy2, p.D_w * ihx2, p.D_w * ihy2, p.D_z * ihx2,
                                             p.D_z * ihy2, p.mu_u, p.rho, chi_u_, chi_w_, p.alpha_u, p.alpha_w,
                                             p.delta_z, p.beta, dt};
        const double* eu = kern.eu;
        const double* ew = kern.ew;
        const double* vn = kern.vn;
        double* an_out = kern.an;
        double* bn_out = kern.bn;
        double* zn_out = kern.zn;

        std::size_t bad = n; // first cell below -clip_tolerance
        std::int64_t clipped = 0;
        double u_max = 0.0, w_max = 0.0, v_max = 0.0, z_max = 0.0, dv_x = 0.0, dv_y = 0.0;

        auto clip_row = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t c = lo; c < hi; ++c) {
                for (double* x : {an_out + c, bn_out + c, zn_out + c}) {
                    if (*x >= 0.0) continue;
                    if (*x >= -clip_tolerance) {
                        *x = 0.0;
                        ++clipped;
                    } else if (bad == n) {
                        bad = c;
                    }
                }
            }
        };

        for (int j = 0; j < ny; ++j) {
            const std::size_t row = static_cast<std::size_t>(j) * nx;
            if (j == 0 || j == ny - 1) {
                for (int i = 0; i < nx; ++i) kern.edge(i, j, nx, ny);
            } else {
                kern.edge(0, j, nx, ny);
                kern.interior(row + 1, row + nx - 1, static_cast<std::size_t>(nx));
                kern.edge(nx - 1, j, nx, ny);
            }
            double row_min = 0.0;
            for (std::size_t c = row; c < row + nx; ++c) {
                const double m = std::min(an_out[c], std::min(bn_out[c], zn_out[c]));
                row_min = m < row_min ? m : row_min;
            }
            if (row_min < 0.0) [[unlikely]] clip_row(row, row + nx);
            for (std::size_t c = row; c < row + nx; ++c) {
                const double ue = an_out[c] * eu[c], we = bn_out[c] * ew[c];
                u_max = ue > u_max ? ue : u_max;
                w_max = we > w_max ? we : w_max;
                v_max = vn[c] > v_max ? vn[c] : v_max;
                z_max = zn_out[c] > z_max ? zn_out[c] : z_max;
            }
        }
        for (int j = 0; j < ny; ++j) {
            const std::size_t row = static_cast<std::size_t>(j) * nx;
            for (int i = 0; i + 1 < nx; ++i) {
                const double d = std::fabs(vn[row + i + 1] - vn[row + i]);
                dv_x = d > dv_x ? d : dv_x;
            }
            if (j + 1 < ny) {
                for (int i = 0; i < nx; ++i) {
                    const double d = std::fabs(vn[row + nx + i] - vn[row + i]);
                    dv_y = d > dv_y ? d : dv_y;
                }
            }
        }
        StabilityStats st{u_max, w_max, v_max, z_max, dv_x, dv_y};

        if (bad != n) {
            // Recover which field failed for the message.
            const int i = static_cast<int>(bad % static_cast<std::size_t>(nx));
            const int j = static_cast<int>(bad / static_cast<std::size_t>(nx));
            const char* name = a_next_[bad] < -clip_tolerance ? "a" : b_next_[bad] < -clip_tolerance ? "b" : "z";
            const double val = std::fmin(a_next_[bad], std::fmin(b_next_[bad], z_next_[bad]));
            throw PositivityError(std::string(name) + " went negative (" + std::to_string(val) + ") at cell (" +
                                  std::to_string(i) + ", " + std::to_string(j) + ")");
        }
        stats_ = st;

        std::swap(s.a.storage(), a_next_);
        std::swap(s.b.storage(), b_next_);
        std::swap(s.v.storage(), v_next_);
        std::swap(s.z.storage(), z_next_);
        std::swap(eu_, eu_next_);
        std::swap(ew_, ew_next_);
        s.clip_events += clipped;
        s.step_count += 1;
        s.t += dt;
    }

private:
    Parameters p_;
    Grid g_;
    double chi_u_;
    double chi_w_;
    bool shared_weight_;
    StabilityStats stats_;
    std::vector<double> eu_, ew_, eu_next_, ew_next_, u_, w_, a_next_, b_next_, v_next_, z_next_;
};

namespace detail {

// Central diffusion plus first-order upwind haptotaxis. The flux of q from
// c toward neighbour m is -xi (v_m - v_c) / h^2 times q at the upwind cell:
// q_c when v_m > v_c, q_m otherwise.
struct DirectKernel {
    const double* u;
    const double* w;
    const double* z;
    const double* vn;
    double* un;
    double* wn;
    double* zn;
    double D_u, D_w, D_z, xi_u, xi_w, mu, rho, delta_z, beta, dt, ihx2, ihy2;

    static double upwind(double d, double qc, double qm) {
        const double out = 0.5 * (d + std::fabs(d)); // max(d, 0), exact
        return out * qc + (d - out) * qm;
    }

    void finish(std::size_t c, double lu, double lw, double lz, double hu, double hw) const {
        const double infection = rho * u[c] * z[c];
        un[c] = u[c] + dt * (lu + hu + mu * u[c] * (1.0 - u[c]) - infection);
        wn[c] = w[c] + dt * (lw + hw - w[c] + infection);
        zn[c] = z[c] + dt * (lz - delta_z * z[c] - infection + beta * w[c]);
    }

    void edge(int i, int j, int nx, int ny) const {
        const std::size_t c = static_cast<std::size_t>(j) * nx + i;
        double lu = 0.0, lw = 0.0, lz = 0.0, hu = 0.0, hw = 0.0;
        auto add = [&](std::size_t m, double ih2) {
            lu += (D_u * ih2) * (u[m] - u[c]);
            lw += (D_w * ih2) * (w[m] - w[c]);
            lz += (D_z * ih2) * (z[m] - z[c]);
            const double drift = (vn[m] - vn[c]) * ih2;
            hu += upwind(drift, u[c], u[m]);
            hw += upwind(drift, w[c], w[m]);
        };
        if (i > 0) add(c - 1, ihx2);
        if (i < nx - 1) add(c + 1, ihx2);
        if (j > 0) add(c - nx, ihy2);
        if (j < ny - 1) add(c + nx, ihy2);
        finish(c, lu, lw, lz, -xi_u * hu, -xi_w * hw);
    }

    void interior(std::size_t lo, std::size_t hi, std::size_t nx) const {
        interior_impl(u + lo, w + lo, z + lo, vn + lo, un + lo, wn + lo, zn + lo, static_cast<std::ptrdiff_t>(hi - lo),
                      static_cast<std::ptrdiff_t>(nx));
    }

private:
    void interior_impl(const double* __restrict pu, const double* __restrict pw, const double* __restrict pz,
                       const double* __restrict pv, double* __restrict ou, double* __restrict ow,
                       double* __restrict oz, std::ptrdiff_t len, std::ptrdiff_t s) const {
        const double dux = D_u * ihx2, duy = D_u * ihy2, dwx = D_w * ihx2, dwy = D_w * ihy2;
        const double dzx = D_z * ihx2, dzy = D_z * ihy2, hx2 = ihx2, hy2 = ihy2;
        const double xu = xi_u, xw = xi_w, kmu = mu, krho = rho, kdz = delta_z, kbeta = beta, h = dt;
        for (std::ptrdiff_t c = 0; c < len; ++c) {
            const double uc = pu[c], wc = pw[c], zc = pz[c], vc = pv[c];
            const double dw_ = (pv[c - 1] - vc) * hx2, de = (pv[c + 1] - vc) * hx2;
            const double ds = (pv[c - s] - vc) * hy2, dn = (pv[c + s] - vc) * hy2;
            const double lu = dux * (pu[c - 1] - uc) + dux * (pu[c + 1] - uc) + duy * (pu[c - s] - uc) +
                              duy * (pu[c + s] - uc);
            const double lw = dwx * (pw[c - 1] - wc) + dwx * (pw[c + 1] - wc) + dwy * (pw[c - s] - wc) +
                              dwy * (pw[c + s] - wc);
            const double lz = dzx * (pz[c - 1] - zc) + dzx * (pz[c + 1] - zc) + dzy * (pz[c - s] - zc) +
                              dzy * (pz[c + s] - zc);
            const double hu = -xu * (upwind(dw_, uc, pu[c - 1]) + upwind(de, uc, pu[c + 1]) +
                                     upwind(ds, uc, pu[c - s]) + upwind(dn, uc, pu[c + s]));
            const double hw = -xw * (upwind(dw_, wc, pw[c - 1]) + upwind(de, wc, pw[c + 1]) +
                                     upwind(ds, wc, pw[c - s]) + upwind(dn, wc, pw[c + s]));
            const double infection = krho * uc * zc;
            ou[c] = uc + h * (lu + hu + kmu * uc * (1.0 - uc) - infection);
            ow[c] = wc + h * (lw + hw - wc + infection);
            oz[c] = zc + h * (lz - kdz * zc - infection + kbeta * wc);
        }
    }
};

} // namespace detail

/// Explicit step of the untransformed system on (u, v, w, z): central
/// diffusion, first-order upwind haptotactic fluxes xi q grad v with zero
/// flux through boundary faces, and the same v and z updates as the
/// transformed scheme. Works on physical densities held by the caller.
class DirectStepper {
public:
    struct Physical {
        double t = 0.0;
        std::vector<double> u, v, w, z;
        std::int64_t step_count = 0;
        std::int64_t clip_events = 0;
    };

    DirectStepper(const Parameters& p, const Grid& g) : p_(p), g_(g) {
        for (auto* buf : {&u_next_, &v_next_, &w_next_, &z_next_}) buf->assign(g.size(), 0.0);
    }

    static Physical from_state(const State& s, const Parameters& p) {
        auto [u, w] = s.physical(p);
        return {s.t,
                std::move(u.storage()),
                std::vector<double>(s.v.values().begin(), s.v.values().end()),
                std::move(w.storage()),
                std::vector<double>(s.z.values().begin(), s.z.values().end()),
                s.step_count,
                s.clip_events};
    }

    void bind(const Physical& s) {
        stats_ = {};
        for (std::size_t k = 0; k < g_.size(); ++k) {
            stats_.u_max = detail::raise(stats_.u_max, s.u[k]);
            stats_.w_max = detail::raise(stats_.w_max, s.w[k]);
            stats_.v_max = detail::raise(stats_.v_max, s.v[k]);
            stats_.z_max = detail::raise(stats_.z_max, s.z[k]);
        }
        detail::face_jumps(s.v, g_, stats_);
    }

    const StabilityStats& stats() const noexcept { return stats_; }

    void advance(Physical& s, double dt, double clip_tolerance) {
        const Parameters& p = p_;
        const int nx = g_.nx;
        const int ny = g_.ny;
        const std::size_t n = g_.size();
        const double* u = s.u.data();
        const double* w = s.w.data();
        const double* v = s.v.data();
        const double* z = s.z.data();

        for (std::size_t k = 0; k < n; ++k) {
            v_next_[k] = v[k] * detail::exp_small(-(p.alpha_u * u[k] + p.alpha_w * w[k]) * dt);
        }
        const double* vn = v_next_.data();

        const double ihx2 = 1.0 / (g_.hx() * g_.hx());
        const double ihy2 = 1.0 / (g_.hy() * g_.hy());
        const detail::DirectKernel kern{u, w, z, vn, u_next_.data(), w_next_.data(), z_next_.data(), p.D_u, p.D_w,
                                        p.D_z, p.xi_u, p.xi_w, p.mu_u, p.rho, p.delta_z, p.beta, dt, ihx2, ihy2};
        for (int j = 0; j < ny; ++j) {
            const std::size_t row = static_cast<std::size_t>(j) * nx;
            if (j == 0 || j == ny - 1) {
                for (int i = 0; i < nx; ++i) kern.edge(i, j, nx, ny);
            } else {
                kern.edge(0, j, nx, ny);
                kern.interior(row + 1, row + nx - 1, static_cast<std::size_t>(nx));
                kern.edge(nx - 1, j, nx, ny);
            }
        }

        std::int64_t clipped = 0;
        clipped += detail::enforce_nonnegative(u_next_, g_, clip_tolerance, "u");
        clipped += detail::enforce_nonnegative(w_next_, g_, clip_tolerance, "w");
        clipped += detail::enforce_nonnegative(z_next_, g_, clip_tolerance, "z");

        std::swap(s.u, u_next_);
        std::swap(s.v, v_next_);
        std::swap(s.w, w_next_);
        std::swap(s.z, z_next_);
        s.clip_events += clipped;
        s.step_count += 1;
        s.t += dt;
        bind(s);
    }

private:
    Parameters p_;
    Grid g_;
    StabilityStats stats_;
    std::vector<double> u_next_, v_next_, w_next_, z_next_;
};

inline State state_from_physical(const DirectStepper::Physical& ph, const Grid& g, const Parameters& p) {
    Field u(g, Quantity::u), v(g, Quantity::v), w(g, Quantity::w), z(g, Quantity::z);
    std::copy(ph.u.begin(), ph.u.end(), u.values().begin());
    std::copy(ph.v.begin(), ph.v.end(), v.values().begin());
    std::copy(ph.w.begin(), ph.w.end(), w.values().begin());
    std::copy(ph.z.begin(), ph.z.end(), z.values().begin());
    auto [a, b] = transform_to_ab(u, w, v, p);
    return State{ph.t, std::move(a), std::move(b), std::move(v), std::move(z), ph.step_count, ph.clip_events};
}

/// One transformed step. Throws StepError when dt exceeds cfl_dt and
/// PositivityError when a field drops below -clip_tolerance.
inline State step_transformed(const State& s, const Parameters& p, const Grid& g, double dt,
                              const SolverConfig& cfg = {}) {
    SolverConfig c = cfg;
    c.scheme = Scheme::transformed;
    detail::check_dt(dt, cfl_dt(p, g, s, c));
    TransformedStepper stepper(p, g);
    stepper.bind(s);
    State next = s;
    stepper.advance(next, dt, cfg.clip_tolerance);
    return next;
}

/// One direct-upwind step, converting (a, b) to (u, w) and back.
inline State step_direct(const State& s, const Parameters& p, const Grid& g, double dt, const SolverConfig& cfg = {}) {
    SolverConfig c = cfg;
    c.scheme = Scheme::direct;
    detail::check_dt(dt, cfl_dt(p, g, s, c));
    DirectStepper stepper(p, g);
    auto ph = DirectStepper::from_state(s, p);
    stepper.bind(ph);
    stepper.advance(ph, dt, cfg.clip_tolerance);
    return state_from_physical(ph, g, p);
}

// ---------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------

/// base + amp cos(kx pi x / Lx) cos(ky pi y / Ly). Such modes have zero
/// normal derivative on the boundary of the rectangle.
struct CosineMode {
    double base = 0.0;
    double amp = 0.0;
    int kx = 0;
    int ky = 0;

    friend bool operator==(const CosineMode&, const CosineMode&) = default;
};

struct InitialProfile {
    enum class Kind { equilibrium, homogeneous, canonical, cosine };
    Kind kind = Kind::canonical;
    CosineMode u, v, w, z; // homogeneous uses only .base

    static InitialProfile equilibrium() { return {Kind::equilibrium, {1.0, 0, 0, 0}, {}, {}, {}}; }
    static InitialProfile homogeneous(double u, double v, double w, double z) {
        return {Kind::homogeneous, {u, 0, 0, 0}, {v, 0, 0, 0}, {w, 0, 0, 0}, {z, 0, 0, 0}};
    }
    static InitialProfile canonical() {
        return {Kind::canonical, {1.0, 0.5, 1, 1}, {0.8, 0.2, 1, 0}, {0.3, 0.1, 0, 1}, {0.2, 0.0, 0, 0}};
    }
    static InitialProfile cosine(CosineMode u, CosineMode v, CosineMode w, CosineMode z) {
        return {Kind::cosine, u, v, w, z};
    }

    friend bool operator==(const InitialProfile&, const InitialProfile&) = default;
};

inline std::string_view to_string(InitialProfile::Kind k) {
    switch (k) {
    case InitialProfile::Kind::equilibrium: return "equilibrium";
    case InitialProfile::Kind::homogeneous: return "homogeneous";
    case InitialProfile::Kind::canonical: return "canonical";
    case InitialProfile::Kind::cosine: return "cosine";
    }
    return "cosine";
}

inline State make_initial(const Grid& g, const InitialProfile& prof, const Parameters& p) {
    g.validate();
    auto build = [&](const CosineMode& m, Quantity q, const char* name) {
        if (!std::isfinite(m.base) || !std::isfinite(m.amp) || m.base - std::fabs(m.amp) < 0.0) {
            throw DomainError(std::string("initial ") + name + ": base - |amp| must be >= 0");
        }
        const double pi = std::acos(-1.0);
        return sample(
            g,
            [&](double x, double y) {
                double s = m.base;
                if (m.amp != 0.0) s += m.amp * std::cos(m.kx * pi * x / g.Lx) * std::cos(m.ky * pi * y / g.Ly);
                return std::fmax(s, 0.0);
            },
            q);
    };
    Field u = build(prof.u, Quantity::u, "u");
    Field v = build(prof.v, Quantity::v, "v");
    Field w = build(prof.w, Quantity::w, "w");
    Field z = build(prof.z, Quantity::z, "z");
    auto [a, b] = transform_to_ab(u, w, v, p);
    return State{0.0, std::move(a), std::move(b), std::move(v), std::move(z), 0, 0};
}

// ---------------------------------------------------------------------------
// Time loop
// ---------------------------------------------------------------------------

using Sink = std::function<void(const State&)>;
using StepHook = std::function<void(const State&, double dt)>;

namespace detail {

[[noreturn]] inline void rethrow_with_context(const Error& e, double t, std::int64_t step) {
    const std::string msg = "t=" + std::to_string(t) + " step=" + std::to_string(step) + ": " + e.what();
    switch (e.kind()) {
    case ErrorKind::domain: throw DomainError(msg);
    case ErrorKind::dimension: throw DimensionError(msg);
    case ErrorKind::state: throw StateError(msg);
    case ErrorKind::step: throw StepError(msg);
    case ErrorKind::positivity: throw PositivityError(msg);
    case ErrorKind::fit: throw FitError(msg);
    case ErrorKind::config: throw ConfigError(msg);
    case ErrorKind::io: throw IoError(msg);
    }
    throw Error(e.kind(), msg);
}

// Shared time loop. `stable()` returns the current stability limit,
// `advance(dt, t_after)` takes one step and stamps the new time, `view()`
// yields the current State (by reference or by value).
template <class Stable, class Advance, class View>
void drive(double t_start, const SolverConfig& cfg, Stable&& stable, Advance&& advance, View&& view, const Sink& sink,
           const StepHook& hook) {
    double t = t_start;
    std::int64_t steps = 0;
    if (sink) {
        decltype(auto) snap = view();
        sink(snap);
    }
    if (!(t < cfg.t_end)) return;

    // Output times are k * cadence, computed by multiplication so they do
    // not drift and a restarted run hits the same stops.
    auto next_output = [&](double now) {
        double k = std::floor(now / cfg.cadence) + 1.0;
        while (k * cfg.cadence <= now) k += 1.0;
        return std::fmin(k * cfg.cadence, cfg.t_end);
    };
    double stop = next_output(t);

    while (t < cfg.t_end) {
        try {
            const double limit = stable();
            double dt = limit;
            if (cfg.fixed_dt > 0.0) {
                check_dt(cfg.fixed_dt, limit);
                dt = cfg.fixed_dt;
            }
            bool landing = false;
            if (t + dt >= stop - 1e-12 * std::fmax(1.0, std::fabs(stop))) {
                dt = stop - t;
                landing = true;
            }
            const double t_after = landing ? stop : t + dt;
            advance(dt, t_after);
            t = t_after;
            ++steps;
            if (hook) {
                decltype(auto) snap = view();
                hook(snap, dt);
            }
            if (landing) {
                if (sink) {
                    decltype(auto) snap = view();
                    sink(snap);
                }
                if (t < cfg.t_end) stop = next_output(t);
            }
        } catch (const Error& e) {
            rethrow_with_context(e, t, steps);
        }
    }
}

} // namespace detail

/// Integrates from initial.t to cfg.t_end. The sink sees the initial state,
/// every multiple of cfg.cadence, and the final state; the hook sees every
/// step. Identical inputs give bit-identical outputs.
inline State run(State initial, const Parameters& p, const Grid& g, const SolverConfig& cfg, const Sink& sink = {},
                 const StepHook& hook = {}) {
    p.validate();
    g.validate();
    cfg.validate();
    initial.validate(g);

    if (cfg.scheme == Scheme::transformed) {
        TransformedStepper stepper(p, g);
        stepper.bind(initial);
        detail::drive(
            initial.t, cfg, [&] { return cfl_from_stats(stepper.stats(), p, g, cfg); },
            [&](double dt, double t_after) {
                stepper.advance(initial, dt, cfg.clip_tolerance);
                initial.t = t_after;
            },
            [&]() -> const State& { return initial; }, sink, hook);
        return initial;
    }

    DirectStepper stepper(p, g);
    auto ph = DirectStepper::from_state(initial, p);
    stepper.bind(ph);
    detail::drive(
        ph.t, cfg, [&] { return cfl_from_stats(stepper.stats(), p, g, cfg); },
        [&](double dt, double t_after) {
            stepper.advance(ph, dt, cfg.clip_tolerance);
            ph.t = t_after;
        },
        [&] { return state_from_physical(ph, g, p); }, sink, hook);
    return state_from_physical(ph, g, p);
}

} // namespace ovsim
