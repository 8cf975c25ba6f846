#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ovsim/errors.hpp"
#include "ovsim/grid.hpp"
#include "ovsim/parameters.hpp"

namespace ovsim {

// ---------------------------------------------------------------------------
// (u, w) <-> (a, b):  a = e^{-chi_u v} u,  b = e^{-chi_w v} w
// ---------------------------------------------------------------------------

namespace detail {

inline void require_nonnegative(double x, const char* name) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
        throw DomainError(std::string(name) + " must be finite and nonnegative, got " + std::to_string(x));
    }
}

inline void require_nonnegative(const Field& f, const char* name) {
    for (std::size_t k = 0; k < f.size(); ++k) {
        if (!(f[k] >= 0.0) || !std::isfinite(f[k])) {
            throw DomainError(std::string(name) + " must be finite and nonnegative (cell " + std::to_string(k) +
                              " = " + std::to_string(f[k]) + ")");
        }
    }
}

} // namespace detail

struct TransformedPair {
    double a;
    double b;
};

struct PhysicalPair {
    double u;
    double w;
};

inline TransformedPair transform_to_ab(double u, double w, double v, const Parameters& p) {
    detail::require_nonnegative(u, "u");
    detail::require_nonnegative(w, "w");
    detail::require_nonnegative(v, "v");
    return {u * std::exp(-p.chi_u() * v), w * std::exp(-p.chi_w() * v)};
}

inline PhysicalPair transform_from_ab(double a, double b, double v, const Parameters& p) {
    detail::require_nonnegative(a, "a");
    detail::require_nonnegative(b, "b");
    detail::require_nonnegative(v, "v");
    return {a * std::exp(p.chi_u() * v), b * std::exp(p.chi_w() * v)};
}

inline std::pair<Field, Field> transform_to_ab(const Field& u, const Field& w, const Field& v, const Parameters& p) {
    require_same_shape(u, w, "transform_to_ab");
    require_same_shape(u, v, "transform_to_ab");
    detail::require_nonnegative(u, "u");
    detail::require_nonnegative(w, "w");
    detail::require_nonnegative(v, "v");
    Field a(u.nx(), u.ny(), Quantity::a);
    Field b(u.nx(), u.ny(), Quantity::b);
    const double cu = p.chi_u();
    const double cw = p.chi_w();
    for (std::size_t k = 0; k < u.size(); ++k) {
        a[k] = u[k] * std::exp(-cu * v[k]);
        b[k] = w[k] * std::exp(-cw * v[k]);
    }
    return {std::move(a), std::move(b)};
}

inline std::pair<Field, Field> transform_from_ab(const Field& a, const Field& b, const Field& v, const Parameters& p) {
    require_same_shape(a, b, "transform_from_ab");
    require_same_shape(a, v, "transform_from_ab");
    detail::require_nonnegative(a, "a");
    detail::require_nonnegative(b, "b");
    detail::require_nonnegative(v, "v");
    Field u(a.nx(), a.ny(), Quantity::u);
    Field w(a.nx(), a.ny(), Quantity::w);
    const double cu = p.chi_u();
    const double cw = p.chi_w();
    for (std::size_t k = 0; k < a.size(); ++k) {
        u[k] = a[k] * std::exp(cu * v[k]);
        w[k] = b[k] * std::exp(cw * v[k]);
    }
    return {std::move(u), std::move(w)};
}

// ---------------------------------------------------------------------------
// Reaction terms of the transformed system
// ---------------------------------------------------------------------------

namespace detail {

// Variants taking the precomputed weights eu = e^{chi_u v}, ew = e^{chi_w v};
// the stepper calls these so each step needs no extra exponentials.
inline double reaction_f(double a, double b, double v, double z, double eu, double ew, const Parameters& p) {
    const double u = a * eu;
    return p.mu_u * a * (1.0 - u) - p.rho * a * z + p.chi_u() * a * (p.alpha_u * u + p.alpha_w * b * ew) * v;
}

inline double reaction_g(double a, double b, double v, double z, double eu, double ew, const Parameters& p) {
    return -b + p.rho * a * z * (eu / ew) + p.chi_w() * b * (p.alpha_u * a * eu + p.alpha_w * b * ew) * v;
}

} // namespace detail

/// mu_u a (1 - a e^{chi_u v}) - rho a z + chi_u a (alpha_u a e^{chi_u v} + alpha_w b e^{chi_w v}) v
inline double reaction_f(double a, double b, double v, double z, const Parameters& p) {
    detail::require_nonnegative(a, "a");
    detail::require_nonnegative(b, "b");
    detail::require_nonnegative(v, "v");
    detail::require_nonnegative(z, "z");
    return detail::reaction_f(a, b, v, z, std::exp(p.chi_u() * v), std::exp(p.chi_w() * v), p);
}

/// -b + rho a z e^{(chi_u - chi_w) v} + chi_w b (alpha_u a e^{chi_u v} + alpha_w b e^{chi_w v}) v
inline double reaction_g(double a, double b, double v, double z, const Parameters& p) {
    detail::require_nonnegative(a, "a");
    detail::require_nonnegative(b, "b");
    detail::require_nonnegative(v, "v");
    detail::require_nonnegative(z, "z");
    return detail::reaction_g(a, b, v, z, std::exp(p.chi_u() * v), std::exp(p.chi_w() * v), p);
}

/// Virus kinetics: -delta_z z - rho u z + beta w.
inline double reaction_z(double u, double w, double z, const Parameters& p) {
    detail::require_nonnegative(u, "u");
    detail::require_nonnegative(w, "w");
    detail::require_nonnegative(z, "z");
    return -p.delta_z * z - p.rho * u * z + p.beta * w;
}

// ---------------------------------------------------------------------------
// Spatially flat subsolution for a once ||z||_inf <= mu_u / (2 rho)
// ---------------------------------------------------------------------------

/// Exact solution at time t of
///
///   a' = a (mu_u / 2 - K a),   a(t0) = a_init,   K = e^{chi_u v0_max}.
///
/// Stays between a_init and the fixed point (mu_u / 2) / K, so it is bounded
/// below by min{a_init, (mu_u / 2) e^{-chi_u v0_max}}.
inline double bernoulli_lower_bound(double a_init, double t0, double t, const Parameters& p, double v0_max) {
    if (!(a_init > 0.0) || !std::isfinite(a_init)) {
        throw DomainError("bernoulli_lower_bound: a_init must be positive");
    }
    if (!(t >= t0)) {
        throw DomainError("bernoulli_lower_bound: t must not precede t0");
    }
    detail::require_nonnegative(v0_max, "v0_max");
    const double r = 0.5 * p.mu_u;
    const double K = std::exp(p.chi_u() * v0_max);
    const double decay = std::exp(-r * (t - t0));
    return a_init * r / (K * a_init + (r - K * a_init) * decay);
}

// ---------------------------------------------------------------------------
// Spatially homogeneous reduction (all transport terms vanish)
// ---------------------------------------------------------------------------

struct HomogeneousStateVector {
    double u = 0.0;
    double v = 0.0;
    double w = 0.0;
    double z = 0.0;

    void validate() const {
        detail::require_nonnegative(u, "u");
        detail::require_nonnegative(v, "v");
        detail::require_nonnegative(w, "w");
        detail::require_nonnegative(z, "z");
    }

    friend bool operator==(const HomogeneousStateVector&, const HomogeneousStateVector&) = default;
};

inline HomogeneousStateVector homogeneous_rhs(const HomogeneousStateVector& y, const Parameters& p) {
    const double infection = p.rho * y.u * y.z;
    return {p.mu_u * y.u * (1.0 - y.u) - infection, -(p.alpha_u * y.u + p.alpha_w * y.w) * y.v, -y.w + infection,
            -p.delta_z * y.z - infection + p.beta * y.w};
}

struct OracleTrajectory {
    std::vector<double> t;
    std::vector<HomogeneousStateVector> states;
    int clamp_events = 0;
};

/// Largest step the oracle is meant for: the real-axis stability limit of
/// classical RK4 (about 2.78) divided by a bound on the Jacobian of the
/// homogeneous system at y, with a factor two margin.
inline double ode_oracle_dt_bound(const HomogeneousStateVector& y, const Parameters& p) {
    const double scale = std::fmax(1.0, std::fmax(std::fmax(y.u, y.w), std::fmax(y.v, y.z)));
    const double jac = p.mu_u * (1.0 + 2.0 * scale) + p.rho * scale * 2.0 + (p.alpha_u + p.alpha_w) * scale * 2.0 +
                       1.0 + p.delta_z + p.beta;
    return 1.39 / jac;
}

/// Classical 4-stage RK4 integration of the homogeneous ODE system from 0 to
/// T with uniform step dt (the last step is shortened to land on T). A
/// component below -1e-12 after a step means dt is too large and throws;
/// smaller negative values are clamped to zero and counted.
inline OracleTrajectory ode_oracle(const HomogeneousStateVector& y0, const Parameters& p, double T, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("ode_oracle: dt must be positive");
    if (!(T >= 0.0) || !std::isfinite(T)) throw DomainError("ode_oracle: T must be nonnegative");
    y0.validate();
    p.validate();

    auto axpy = [](const HomogeneousStateVector& y, double h, const HomogeneousStateVector& k) {
        return HomogeneousStateVector{y.u + h * k.u, y.v + h * k.v, y.w + h * k.w, y.z + h * k.z};
    };

    OracleTrajectory out;
    const auto steps = static_cast<long>(std::ceil(T / dt - 1e-9));
    out.t.reserve(static_cast<std::size_t>(steps) + 1);
    out.states.reserve(static_cast<std::size_t>(steps) + 1);
    out.t.push_back(0.0);
    out.states.push_back(y0);

    HomogeneousStateVector y = y0;
    for (long n = 0; n < steps; ++n) {
        const double t0 = static_cast<double>(n) * dt;
        const double t1 = n + 1 == steps ? T : static_cast<double>(n + 1) * dt;
        const double h = t1 - t0;
        const auto k1 = homogeneous_rhs(y, p);
        const auto k2 = homogeneous_rhs(axpy(y, 0.5 * h, k1), p);
        const auto k3 = homogeneous_rhs(axpy(y, 0.5 * h, k2), p);
        const auto k4 = homogeneous_rhs(axpy(y, h, k3), p);
        const double s = h / 6.0;
        y = {y.u + s * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u), y.v + s * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
             y.w + s * (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w), y.z + s * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z)};
        for (double* c : {&y.u, &y.v, &y.w, &y.z}) {
            if (!std::isfinite(*c) || *c < -1e-12) {
                throw DomainError("ode_oracle: component left the nonnegative cone at t=" + std::to_string(t1) +
                                  "; reduce dt below " + std::to_string(ode_oracle_dt_bound(y0, p)));
            }
            if (*c < 0.0) {
                *c = 0.0;
                ++out.clamp_events;
            }
        }
        out.t.push_back(t1);
        out.states.push_back(y);
    }
    return out;
}

/// Slowest decay rate of w + z for the homogeneous system linearized at
/// (1, 0, 0, 0): the smaller root magnitude of
///   lambda^2 + (1 + delta_z + rho) lambda + (delta_z + rho - rho beta) = 0.
/// Negative when the linearization is unstable.
inline double linearized_mass_decay_rate(const Parameters& p) {
    const double tr = 1.0 + p.delta_z + p.rho;
    const double disc = (1.0 - p.delta_z - p.rho) * (1.0 - p.delta_z - p.rho) + 4.0 * p.rho * p.beta;
    return 0.5 * (tr - std::sqrt(disc));
}

} // namespace ovsim
