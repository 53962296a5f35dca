#pragma once

// Synthetic tissue-parameter maps used as regression targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mrf/core/error.hpp"
#include "mrf/core/grid.hpp"

namespace mrf {

/// Per-voxel T1/T2 (ms), B0 (Hz) and a tissue mask (1 = tissue).
struct TissueMap {
    Grid<double> t1;
    Grid<double> t2;
    Grid<double> b0;
    Grid<std::uint8_t> mask;

    std::size_t rows() const { return mask.rows; }
    std::size_t cols() const { return mask.cols; }
    std::size_t masked_count() const { return static_cast<std::size_t>(std::count(mask.values.begin(), mask.values.end(), 1)); }
};

struct TissueClass {
    std::string name;
    double t1_ms;
    double t2_ms;
};

struct PhantomConfig {
    std::vector<TissueClass> classes{{"white_matter", 800.0, 70.0}, {"gray_matter", 1300.0, 90.0}, {"csf", 4000.0, 500.0}};
    double variation = 0.10;   // relative half-width of the within-class range
    double b0_max_hz = 50.0;   // |B0| bound of the polynomial field
    std::size_t background_class = 0;  // tissue class filling the head before the shapes are drawn

    void validate() const {
        if (classes.empty()) throw ConfigError("phantom: no tissue classes");
        if (!(variation >= 0.0 && variation < 1.0)) throw ConfigError("phantom: variation must lie in [0, 1)");
        if (background_class >= classes.size()) throw ConfigError("phantom: background_class out of range");
        if (b0_max_hz < 0.0) throw ConfigError("phantom: b0_max_hz must be non-negative");
        for (const auto& c : classes) {
            if (!(c.t2_ms > 0.0) || c.t1_ms * (1.0 - variation) <= c.t2_ms * (1.0 + variation)) {
                throw ConfigError("phantom: class '" + c.name + "' ranges allow t1 <= t2");
            }
        }
    }
};

namespace detail {

struct Ellipse {
    double cx, cy, ax, ay, angle;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
        return u * u + v * v <= 1.0;
    }
};

}  // namespace detail

/// Overlapping-ellipse phantom inside an elliptical head mask. Deterministic
/// in (size, n_shapes, seed, cfg).
inline TissueMap make_phantom(std::size_t size, std::size_t n_shapes, std::uint64_t seed, const PhantomConfig& cfg = {}) {
    if (size < 8) throw ConfigError("make_phantom: size must be at least 8, got " + std::to_string(size));
    cfg.validate();

    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto draw_values = [&](std::size_t cls) {
        const auto& c = cfg.classes[cls];
        const double t1 = c.t1_ms * (1.0 + uniform(-cfg.variation, cfg.variation));
        const double t2 = c.t2_ms * (1.0 + uniform(-cfg.variation, cfg.variation));
        return std::pair{t1, t2};
    };

    TissueMap map{Grid<double>(size, size), Grid<double>(size, size), Grid<double>(size, size),
                  Grid<std::uint8_t>(size, size)};
    auto coord = [size](std::size_t i) { return (static_cast<double>(i) + 0.5) / static_cast<double>(size) * 2.0 - 1.0; };

    const detail::Ellipse head{uniform(-0.03, 0.03), uniform(-0.03, 0.03), uniform(0.78, 0.92), uniform(0.82, 0.95),
                               uniform(-0.15, 0.15)};
    const auto [bg_t1, bg_t2] = draw_values(cfg.background_class);
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            if (head.contains(coord(c), coord(r))) {
                map.mask(r, c) = 1;
                map.t1(r, c) = bg_t1;
                map.t2(r, c) = bg_t2;
            }
        }
    }

    for (std::size_t s = 0; s < n_shapes; ++s) {
        const double radius = uniform(0.0, 0.55), theta = uniform(0.0, 2.0 * std::numbers::pi);
        const detail::Ellipse e{radius * std::cos(theta), radius * std::sin(theta), uniform(0.1, 0.4), uniform(0.1, 0.4),
                                uniform(0.0, std::numbers::pi)};
        const auto cls = static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, cfg.classes.size() - 1)(rng));
        const auto [t1, t2] = draw_values(cls);
        for (std::size_t r = 0; r < size; ++r) {
            for (std::size_t c = 0; c < size; ++c) {
                if (map.mask(r, c) && e.contains(coord(c), coord(r))) {
                    map.t1(r, c) = t1;
                    map.t2(r, c) = t2;
                }
            }
        }
    }

    // Degree-2 polynomial B0 surface scaled into [-b0_max, b0_max].
    double coef[6];
    for (double& k : coef) k = uniform(-1.0, 1.0);
    const double amplitude = uniform(0.2, 1.0) * cfg.b0_max_hz;
    double peak = 0.0;
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            const double x = coord(c), y = coord(r);
            const double v = coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * x + coef[4] * x * y + coef[5] * y * y;
            map.b0(r, c) = map.mask(r, c) ? v : 0.0;
            peak = std::max(peak, std::abs(map.b0(r, c)));
        }
    }
    if (peak > 0.0) {
        for (double& v : map.b0.values) v *= amplitude / peak;
    }
    return map;
}

/// Global masked mean / standard deviation of T1 and T2 over a set of maps.
struct TargetStats {
    double mean_t1 = 0.0;
    double std_t1 = 1.0;
    double mean_t2 = 0.0;
    double std_t2 = 1.0;
    bool t1_degenerate = false;  // zero spread; std replaced by 1
    bool t2_degenerate = false;
};

inline TargetStats standardize_targets(const std::vector<TissueMap>& maps) {
    std::size_t n = 0;
    double s1 = 0.0, s2 = 0.0;
    for (const auto& m : maps) {
        for (std::size_t i = 0; i < m.mask.size(); ++i) {
            if (!m.mask.values[i]) continue;
            ++n;
            s1 += m.t1.values[i];
            s2 += m.t2.values[i];
        }
    }
    if (n == 0) throw DataError("standardize_targets: no masked voxels");
    TargetStats st;
    st.mean_t1 = s1 / static_cast<double>(n);
    st.mean_t2 = s2 / static_cast<double>(n);
    double v1 = 0.0, v2 = 0.0;
    for (const auto& m : maps) {
        for (std::size_t i = 0; i < m.mask.size(); ++i) {
            if (!m.mask.values[i]) continue;
            v1 += (m.t1.values[i] - st.mean_t1) * (m.t1.values[i] - st.mean_t1);
            v2 += (m.t2.values[i] - st.mean_t2) * (m.t2.values[i] - st.mean_t2);
        }
    }
    st.std_t1 = std::sqrt(v1 / static_cast<double>(n));
    st.std_t2 = std::sqrt(v2 / static_cast<double>(n));
    if (st.std_t1 == 0.0) {
        st.std_t1 = 1.0;
        st.t1_degenerate = true;
    }
    if (st.std_t2 == 0.0) {
        st.std_t2 = 1.0;
        st.t2_degenerate = true;
    }
    return st;
}

inline double standardize(double v, double mean, double std) { return (v - mean) / std; }
inline double destandardize(double z, double mean, double std) { return z * std + mean; }

}  // namespace mrf
