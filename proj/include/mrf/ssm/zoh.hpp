#pragma once

// Zero-order-hold discretisation of the scalar system h' = a h + b x:
//   ā = exp(Δa),  b̄ = (Δa)⁻¹ (exp(Δa) − 1) Δ b.

#include <cmath>

#include "mrf/core/error.hpp"

namespace mrf::ssm {

/// Below this |z| the phi functions switch to their Taylor series.
inline constexpr double kPhiSeriesThreshold = 1e-3;

/// φ₁(z) = (eᶻ − 1) / z, with φ₁(0) = 1.
template <class T>
T phi1(T z) {
    if (std::abs(z) < T(kPhiSeriesThreshold)) return T(1) + z * (T(1) / 2 + z * (T(1) / 6 + z / T(24)));
    return std::expm1(z) / z;
}

/// φ₁'(z) = (z eᶻ − eᶻ + 1) / z², with φ₁'(0) = 1/2.
template <class T>
T phi1_prime(T z) {
    if (std::abs(z) < T(kPhiSeriesThreshold)) return T(1) / 2 + z * (T(1) / 3 + z * (T(1) / 8 + z / T(30)));
    const T em1 = std::expm1(z);
    return (z * em1 + (z - em1)) / (z * z);
}

/// φ₁'(z) from already computed eᶻ and φ₁(z): (eᶻ − φ₁(z)) / z.
template <class T>
T phi1_prime(T z, T ez, T phi) {
    if (std::abs(z) < T(kPhiSeriesThreshold)) return T(1) / 2 + z * (T(1) / 3 + z * (T(1) / 8 + z / T(30)));
    return (ez - phi) / z;
}

struct ZohPair {
    double a_bar;
    double b_bar;
};

inline ZohPair discretize_zoh(double a, double b, double delta) {
    if (!(delta > 0.0)) throw ConfigError("discretize_zoh: delta must be positive");
    const double z = delta * a;
    return {std::exp(z), phi1(z) * delta * b};
}

}  // namespace mrf::ssm
