#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "ovsim/grid.hpp"

using namespace ovsim;
using Catch::Approx;

namespace {

const double pi = std::acos(-1.0);

Field random_field(const Grid& g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    Field f(g);
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = d(rng);
    return f;
}

double order(double coarse, double fine) { return std::log2(coarse / fine); }

} // namespace

TEST_CASE("grid geometry and validation") {
    const Grid g = Grid::make(8, 4, 2.0, 1.0);
    CHECK(g.hx() == 0.25);
    CHECK(g.hy() == 0.25);
    CHECK(g.x(0) == 0.125);
    CHECK(g.y(3) == 0.875);
    CHECK(g.size() == 32);
    CHECK(g.index(1, 2) == 17);
    CHECK(g.area() == 2.0);
    CHECK_THROWS_AS(Grid::make(3, 8), DomainError);
    CHECK_THROWS_AS(Grid::make(8, 8, 0.0), DomainError);
    CHECK_THROWS_AS(Grid::make(8, 8, 1.0, NAN), DomainError);
}

TEST_CASE("weighted diffusion annihilates constants") {
    const Grid g = Grid::make(12, 9);
    const Field a(g, Quantity::a, 0.37);
    const Field v = random_field(g, 1);
    const Field out = weighted_diffusion(a, v, 10.0, 0.1, g);
    for (double x : out.values()) CHECK(x == 0.0);
}

TEST_CASE("weighted diffusion with constant v is the plain Laplacian") {
    const Grid g = Grid::make(16, 10, 1.0, 0.7);
    const Field a = random_field(g, 2);
    const Field v(g, Quantity::v, 0.6);
    const Field w = weighted_diffusion(a, v, 10.0, 0.3, g);
    const Field l = laplacian(a, 0.3, g);
    double worst = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        worst = std::fmax(worst, std::fabs(w[k] - l[k]));
        scale = std::fmax(scale, std::fabs(l[k]));
    }
    CHECK(worst <= 1e-13 * scale);
}

TEST_CASE("laplacian equals weighted diffusion with chi = 0 bit for bit") {
    const Grid g = Grid::make(10, 14);
    const Field z = random_field(g, 3);
    const Field v = random_field(g, 4, 0.0, 5.0);
    CHECK(laplacian(z, 0.1, g) == weighted_diffusion(z, v, 0.0, 0.1, g));
    const Field c(g, Quantity::z, 2.5);
    for (double x : laplacian(c, 1.0, g).values()) CHECK(x == 0.0);
}

TEST_CASE("weighted mass is conserved by the flux form") {
    const Grid g = Grid::make(20, 16);
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const Field a = random_field(g, seed, 0.0, 2.0);
        const Field v = random_field(g, seed + 100);
        for (double chi : {1.0, 10.0}) {
            const Field out = weighted_diffusion(a, v, chi, 0.1, g);
            double sum = 0.0, mag = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double term = std::exp(chi * v[k]) * out[k] * g.cell_area();
                sum += term;
                mag += std::fabs(term);
            }
            // chi = 10 puts weights near e^10, so only a relative bound is meaningful
            if (chi == 1.0) CHECK(std::fabs(sum) <= 1e-12);
            CHECK(std::fabs(sum) <= 1e-14 * mag);
        }
    }
}

TEST_CASE("diffusion operators are linear") {
    const Grid g = Grid::make(9, 11);
    const Field f = random_field(g, 20), h = random_field(g, 21), v = random_field(g, 22);
    const double al = 1.7, be = -0.4;
    Field comb(g);
    for (std::size_t k = 0; k < f.size(); ++k) comb[k] = al * f[k] + be * h[k];
    const Field lhs = weighted_diffusion(comb, v, 3.0, 0.2, g);
    const Field lf = weighted_diffusion(f, v, 3.0, 0.2, g), lh = weighted_diffusion(h, v, 3.0, 0.2, g);
    for (std::size_t k = 0; k < f.size(); ++k) CHECK(lhs[k] == Approx(al * lf[k] + be * lh[k]).margin(1e-11));
}

TEST_CASE("reflection symmetric input gives symmetric output") {
    const Grid g = Grid::make(12, 12);
    Field a = random_field(g, 30), v = random_field(g, 31);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx / 2; ++i) {
            a(g.nx - 1 - i, j) = a(i, j);
            v(g.nx - 1 - i, j) = v(i, j);
        }
    }
    const Field out = weighted_diffusion(a, v, 10.0, 0.1, g);
    const Field sq = gradient_sq(v, g);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx / 2; ++i) {
            CHECK(out(i, j) == Approx(out(g.nx - 1 - i, j)).epsilon(1e-13));
            CHECK(sq(i, j) == sq(g.nx - 1 - i, j));
        }
    }
}

TEST_CASE("five-point stencil is exact on x^2 away from the walls") {
    for (int n : {16, 32, 64}) {
        const Grid g = Grid::make(n, 4);
        const Field a = sample(g, [](double x, double) { return x * x; });
        const Field v(g, Quantity::v, 0.0);
        const Field out = weighted_diffusion(a, v, 10.0, 1.0, g);
        for (int i = 1; i < n - 1; ++i) CHECK(out(i, 2) == Approx(2.0).epsilon(1e-9));
    }
}

TEST_CASE("weighted diffusion truncation error is second order") {
    // a = cos(pi x), v = 0.3 cos(pi x): both have zero normal derivative, so
    // every cell (walls included) is second order.
    const double chi = 2.0, D = 0.5;
    auto exact = [&](double x) {
        const double a = std::cos(pi * x), ax = -pi * std::sin(pi * x), axx = -pi * pi * a;
        const double vx = -0.3 * pi * std::sin(pi * x);
        return D * (axx + chi * vx * ax);
    };
    std::vector<double> err;
    for (int n : {32, 64, 128, 256}) {
        const Grid g = Grid::make(n, 4);
        const Field a = sample(g, [](double x, double) { return std::cos(pi * x); });
        const Field v = sample(g, [](double x, double) { return 0.3 * std::cos(pi * x); });
        const Field out = weighted_diffusion(a, v, chi, D, g);
        double e = 0.0;
        for (int i = 0; i < n; ++i) e = std::fmax(e, std::fabs(out(i, 1) - exact(g.x(i))));
        err.push_back(e);
    }
    for (std::size_t k = 1; k < err.size(); ++k) CHECK(order(err[k - 1], err[k]) == Approx(2.0).margin(0.2));
}

TEST_CASE("discrete cosine eigenvalue converges at second order") {
    const double D = 0.1, Lx = 2.0;
    const double lambda = -D * (pi / Lx) * (pi / Lx);
    std::vector<double> err;
    for (int n : {16, 32, 64, 128}) {
        const Grid g = Grid::make(n, 4, Lx, 1.0);
        const Field z = sample(g, [&](double x, double) { return std::cos(pi * x / Lx); });
        const Field out = laplacian(z, D, g);
        // cell-centered cosines are exact discrete eigenvectors
        const double ev = out(1, 0) / z(1, 0);
        for (int i = 0; i < n; ++i) {
            if (std::fabs(z(i, 0)) > 0.1) CHECK(out(i, 0) / z(i, 0) == Approx(ev).epsilon(1e-10));
        }
        err.push_back(std::fabs(ev - lambda));
    }
    for (std::size_t k = 1; k < err.size(); ++k) CHECK(order(err[k - 1], err[k]) == Approx(2.0).margin(0.05));
}

TEST_CASE("gradient integrals") {
    const Grid g = Grid::make(32, 32);
    const Field c(g, Quantity::v, 0.4);
    CHECK(gradient_sq_integral(c, g) == 0.0);
    CHECK(gradient_quartic_integral(c, g) == 0.0);

    for (int n : {16, 32, 64, 128}) {
        const Grid gn = Grid::make(n, n);
        const Field v = sample(gn, [](double x, double) { return x; });
        CHECK(std::fabs(gradient_sq_integral(v, gn) - 1.0) <= 2.0 * gn.hx());
        CHECK(std::fabs(gradient_quartic_integral(v, gn) - 1.0) <= 2.0 * gn.hx());
    }
}

TEST_CASE("gradient integral of sin(2 pi x) converges to 2 pi^2") {
    // the wall faces contribute zero difference, so a profile with nonzero
    // slope at the walls converges at first order only
    std::vector<double> err;
    for (int n : {32, 64, 128, 256}) {
        const Grid g = Grid::make(n, 4);
        const Field v = sample(g, [](double x, double) { return std::sin(2 * pi * x); });
        err.push_back(std::fabs(gradient_sq_integral(v, g) - 2 * pi * pi));
    }
    for (std::size_t k = 1; k < err.size(); ++k) CHECK(order(err[k - 1], err[k]) >= 0.9);
    CHECK(err.back() < 0.5);
}

TEST_CASE("gradient integral of cos(2 pi x) converges at second order") {
    std::vector<double> err;
    for (int n : {32, 64, 128, 256}) {
        const Grid g = Grid::make(n, 4);
        const Field v = sample(g, [](double x, double) { return std::cos(2 * pi * x); });
        err.push_back(std::fabs(gradient_sq_integral(v, g) - 2 * pi * pi));
    }
    for (std::size_t k = 1; k < err.size(); ++k) CHECK(order(err[k - 1], err[k]) >= 1.9);
}

TEST_CASE("quadrature") {
    const Grid g = Grid::make(32, 16);
    CHECK(quadrature(Field(g, Quantity::derived, 1.0), g) == 1.0);
    const Field f = random_field(g, 40), h = random_field(g, 41);
    Field comb(g);
    for (std::size_t k = 0; k < f.size(); ++k) comb[k] = 2.5 * f[k] - 0.75 * h[k];
    CHECK(quadrature(comb, g) == Approx(2.5 * quadrature(f, g) - 0.75 * quadrature(h, g)).margin(1e-13));
    const Field c = sample(g, [](double x, double) { return std::cos(2 * pi * x); });
    CHECK(std::fabs(quadrature(c, g)) <= 1e-12);
    CHECK_THROWS_AS(quadrature(Field(8, 8), g), DimensionError);
}

TEST_CASE("shape mismatches are dimension errors") {
    const Grid g = Grid::make(8, 8);
    const Field ok(g), bad(8, 9);
    CHECK_THROWS_AS(weighted_diffusion(bad, ok, 1.0, 1.0, g), DimensionError);
    CHECK_THROWS_AS(weighted_diffusion(ok, bad, 1.0, 1.0, g), DimensionError);
    CHECK_THROWS_AS(laplacian(bad, 1.0, g), DimensionError);
    CHECK_THROWS_AS(gradient_sq(bad, g), DimensionError);
}
