#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovsim/errors.hpp"

namespace ovsim {

/// Uniform cell-centered mesh on [0, Lx] x [0, Ly]. Cell (i, j) has its
/// center at ((i + 1/2) hx, (j + 1/2) hy). Storage is row-major with x
/// fastest: index = j * nx + i.
struct Grid {
    int nx = 0;
    int ny = 0;
    double Lx = 1.0;
    double Ly = 1.0;

    static Grid make(int nx, int ny, double Lx = 1.0, double Ly = 1.0) {
        Grid g{nx, ny, Lx, Ly};
        g.validate();
        return g;
    }

    void validate() const {
        if (nx < 4 || ny < 4) {
            throw DomainError("grid needs at least 4 cells per axis, got " + std::to_string(nx) + "x" +
                              std::to_string(ny));
        }
        if (!(Lx > 0.0) || !(Ly > 0.0) || !std::isfinite(Lx) || !std::isfinite(Ly)) {
            throw DomainError("grid lengths must be positive and finite");
        }
    }

    double hx() const noexcept { return Lx / nx; }
    double hy() const noexcept { return Ly / ny; }
    double cell_area() const noexcept { return hx() * hy(); }
    double area() const noexcept { return Lx * Ly; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t index(int i, int j) const noexcept {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i);
    }
    double x(int i) const noexcept { return (i + 0.5) * hx(); }
    double y(int j) const noexcept { return (j + 0.5) * hy(); }

    friend bool operator==(const Grid&, const Grid&) = default;
};

enum class Quantity { a, b, v, z, u, w, derived };

inline std::string_view to_string(Quantity q) {
    switch (q) {
    case Quantity::a: return "a";
    case Quantity::b: return "b";
    case Quantity::v: return "v";
    case Quantity::z: return "z";
    case Quantity::u: return "u";
    case Quantity::w: return "w";
    case Quantity::derived: return "derived";
    }
    return "derived";
}

/// Cell values of one quantity on an nx x ny grid.
class Field {
public:
    Field() = default;
    Field(int nx, int ny, Quantity q = Quantity::derived, double fill = 0.0)
        : nx_(nx), ny_(ny), quantity_(q),
          values_(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), fill) {}
    Field(const Grid& g, Quantity q = Quantity::derived, double fill = 0.0) : Field(g.nx, g.ny, q, fill) {}

    int nx() const noexcept { return nx_; }
    int ny() const noexcept { return ny_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    Quantity quantity() const noexcept { return quantity_; }
    void set_quantity(Quantity q) noexcept { quantity_ = q; }

    double& operator()(int i, int j) noexcept { return values_[static_cast<std::size_t>(j) * nx_ + i]; }
    double operator()(int i, int j) const noexcept { return values_[static_cast<std::size_t>(j) * nx_ + i]; }
    double& operator[](std::size_t k) noexcept { return values_[k]; }
    double operator[](std::size_t k) const noexcept { return values_[k]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::vector<double>& storage() noexcept { return values_; }

    bool same_shape(const Field& o) const noexcept { return nx_ == o.nx_ && ny_ == o.ny_; }
    bool on(const Grid& g) const noexcept { return nx_ == g.nx && ny_ == g.ny; }

    double max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }
    double min() const { return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end()); }

    friend bool operator==(const Field& l, const Field& r) {
        return l.nx_ == r.nx_ && l.ny_ == r.ny_ && l.values_ == r.values_;
    }

private:
    int nx_ = 0;
    int ny_ = 0;
    Quantity quantity_ = Quantity::derived;
    std::vector<double> values_;
};

inline void require_on_grid(const Field& f, const Grid& g, std::string_view what) {
    if (!f.on(g)) {
        throw DimensionError(std::string(what) + " is " + std::to_string(f.nx()) + "x" + std::to_string(f.ny()) +
                             ", grid is " + std::to_string(g.nx) + "x" + std::to_string(g.ny));
    }
}

inline void require_same_shape(const Field& l, const Field& r, std::string_view what) {
    if (!l.same_shape(r)) {
        throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(l.nx()) + "x" +
                             std::to_string(l.ny()) + " vs " + std::to_string(r.nx()) + "x" + std::to_string(r.ny()));
    }
}

namespace detail {

// Flux-form diffusion with face weights m = (W_c + W_n) / 2 and zero flux
// through boundary faces:
//
//   out_c = D / W_c * sum_faces m_f (q_n - q_c) / h_f^2
//
// With Weighted == false every weight is taken as exactly 1.0, which makes
// the unweighted kernel bit-identical to the weighted one fed all-ones.
template <bool Weighted>
void diffusion_kernel(std::span<const double> q, std::span<const double> weight, double D, const Grid& g,
                      std::span<double> out) {
    const int nx = g.nx;
    const int ny = g.ny;
    const double cx = D / (g.hx() * g.hx());
    const double cy = D / (g.hy() * g.hy());
    auto face = [&](std::size_t c, std::size_t n, double coef) {
        if constexpr (Weighted) {
            return (coef * (0.5 * (weight[c] + weight[n]))) * (q[n] - q[c]);
        } else {
            return (coef * 1.0) * (q[n] - q[c]);
        }
    };
    for (int j = 0; j < ny; ++j) {
        const std::size_t row = static_cast<std::size_t>(j) * nx;
        for (int i = 0; i < nx; ++i) {
            const std::size_t c = row + i;
            double acc = 0.0;
            if (i > 0) acc += face(c, c - 1, cx);
            if (i < nx - 1) acc += face(c, c + 1, cx);
            if (j > 0) acc += face(c, c - nx, cy);
            if (j < ny - 1) acc += face(c, c + nx, cy);
            if constexpr (Weighted) {
                out[c] = acc / weight[c];
            } else {
                out[c] = acc;
            }
        }
    }
}

} // namespace detail

/// D e^{-chi v} div(e^{chi v} grad a) in conservative flux form with
/// no-flux boundaries. Face weights are the arithmetic mean of e^{chi v} at
/// the two adjacent centers.
inline Field weighted_diffusion(const Field& a, const Field& v, double chi, double D, const Grid& g) {
    require_on_grid(a, g, "weighted_diffusion: a");
    require_on_grid(v, g, "weighted_diffusion: v");
    std::vector<double> weight(g.size());
    for (std::size_t k = 0; k < weight.size(); ++k) weight[k] = std::exp(chi * v[k]);
    Field out(g, Quantity::derived);
    detail::diffusion_kernel<true>(a.values(), weight, D, g, out.values());
    return out;
}

/// D Lap z, 5-point stencil with reflected ghosts (zero normal flux).
inline Field laplacian(const Field& z, double D, const Grid& g) {
    require_on_grid(z, g, "laplacian: z");
    Field out(g, Quantity::derived);
    detail::diffusion_kernel<false>(z.values(), {}, D, g, out.values());
    return out;
}

/// Midpoint rule: sum f * hx * hy.
inline double quadrature(std::span<const double> f, const Grid& g) {
    double sum = 0.0;
    for (double x : f) sum += x;
    return sum * g.cell_area();
}

inline double quadrature(const Field& f, const Grid& g) {
    require_on_grid(f, g, "quadrature");
    return quadrature(f.values(), g);
}

/// Cell-centered |grad v|^2: per axis, the two adjacent face differences are
/// averaged, with boundary faces contributing zero.
inline Field gradient_sq(const Field& v, const Grid& g) {
    require_on_grid(v, g, "gradient_sq: v");
    const int nx = g.nx;
    const int ny = g.ny;
    const double ihx = 1.0 / g.hx();
    const double ihy = 1.0 / g.hy();
    Field out(g, Quantity::derived);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const double c = v(i, j);
            const double west = i > 0 ? (c - v(i - 1, j)) * ihx : 0.0;
            const double east = i < nx - 1 ? (v(i + 1, j) - c) * ihx : 0.0;
            const double south = j > 0 ? (c - v(i, j - 1)) * ihy : 0.0;
            const double north = j < ny - 1 ? (v(i, j + 1) - c) * ihy : 0.0;
            const double gx = 0.5 * (west + east);
            const double gy = 0.5 * (south + north);
            out(i, j) = gx * gx + gy * gy;
        }
    }
    return out;
}

inline double gradient_sq_integral(const Field& v, const Grid& g) { return quadrature(gradient_sq(v, g), g); }

inline double gradient_quartic_integral(const Field& v, const Grid& g) {
    Field sq = gradient_sq(v, g);
    double sum = 0.0;
    for (double s : sq.values()) sum += s * s;
    return sum * g.cell_area();
}

/// Builds a field by sampling f(x, y) at cell centers.
template <class F>
Field sample(const Grid& g, F&& f, Quantity q = Quantity::derived) {
    Field out(g, q);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) out(i, j) = f(g.x(i), g.y(j));
    }
    return out;
}

} // namespace ovsim
