#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

#include "ovsim/errors.hpp"

namespace ovsim {

/// Coefficients of the four-species virotherapy model
///
///   u_t = D_u Lap u - xi_u div(u grad v) + mu_u u (1 - u) - rho u z
///   w_t = D_w Lap w - xi_w div(w grad v) - w + rho u z
///   v_t = -(alpha_u u + alpha_w w) v
///   z_t = D_z Lap z - delta_z z - rho u z + beta w
///
/// with no-flux boundaries. The haptotactic ratios chi_u = xi_u / D_u and
/// chi_w = xi_w / D_w are always derived, never stored.
struct Parameters {
    double D_u = 0.1;
    double D_w = 0.1;
    double D_z = 0.1;
    double xi_u = 1.0;
    double xi_w = 1.0;
    double mu_u = 1.0;
    double rho = 1.0;
    double alpha_u = 1.0;
    double alpha_w = 1.0;
    double delta_z = 1.0;
    double beta = 0.5;

    double chi_u() const noexcept { return xi_u / D_u; }
    double chi_w() const noexcept { return xi_w / D_w; }

    /// Burst factor below one: the regime where boundedness and decay to
    /// (1, 0, 0, 0) are guaranteed.
    bool convergence_regime() const noexcept { return beta < 1.0; }

    /// Guaranteed L1 decay exponent of w + z, min{1 - beta, delta_z}.
    double mass_decay_rate() const noexcept { return std::fmin(1.0 - beta, delta_z); }

    /// Guaranteed sup-norm decay exponent of z (half of the L1 exponent).
    double virus_decay_rate() const noexcept { return 0.5 * mass_decay_rate(); }

    /// Name/value view in the canonical order used by configs and hashing.
    std::array<std::pair<std::string_view, double>, 11> named() const {
        return {{{"D_u", D_u},
                 {"D_w", D_w},
                 {"D_z", D_z},
                 {"xi_u", xi_u},
                 {"xi_w", xi_w},
                 {"mu_u", mu_u},
                 {"rho", rho},
                 {"alpha_u", alpha_u},
                 {"alpha_w", alpha_w},
                 {"delta_z", delta_z},
                 {"beta", beta}}};
    }

    /// Throws DomainError naming the first coefficient that is not strictly
    /// positive and finite.
    void validate() const {
        for (const auto& [name, value] : named()) {
            if (!std::isfinite(value) || !(value > 0.0)) {
                throw DomainError(std::string(name) + " must be positive");
            }
        }
    }

    /// FNV-1a over the IEEE bit patterns of the coefficients (fed low byte
    /// first), for snapshot sidecars.
    std::uint64_t hash() const noexcept {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& nv : named()) {
            const auto bits = std::bit_cast<std::uint64_t>(nv.second);
            for (int k = 0; k < 8; ++k) {
                h ^= (bits >> (8 * k)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
        return h;
    }
};

} // namespace ovsim
