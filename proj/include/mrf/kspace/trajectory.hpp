#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "mrf/core/error.hpp"

namespace mrf {

/// k-space location in cycles per pixel; the sampled band is |k| <= 0.5.
struct KPoint {
    double kx;
    double ky;
};

/// Golden-angle increment between consecutive spokes, in degrees.
inline constexpr double kGoldenAngleDeg = 111.24611;

struct RadialTrajectory {
    std::size_t frames = 0;
    std::size_t samples_per_spoke = 0;
    std::size_t spokes_per_frame = 1;
    std::vector<double> angles;               // radians, one per spoke, frame-major
    std::vector<std::vector<KPoint>> coords;  // per frame, spoke after spoke

    const std::vector<KPoint>& frame(std::size_t f) const { return coords.at(f); }
    double spoke_angle(std::size_t f, std::size_t s = 0) const { return angles.at(f * spokes_per_frame + s); }
};

/// Spoke s (counted across all frames) sits at angle s·ψ mod π; samples are
/// uniform along the diameter from -0.5 to 0.5, so the centre is sampled.
inline RadialTrajectory golden_angle_trajectory(std::size_t frames, std::size_t samples_per_spoke,
                                                std::size_t spokes_per_frame = 1,
                                                double increment_deg = kGoldenAngleDeg) {
    if (samples_per_spoke < 3 || samples_per_spoke % 2 == 0) {
        throw ConfigError("golden_angle_trajectory: samples_per_spoke must be odd and >= 3, got " +
                          std::to_string(samples_per_spoke));
    }
    if (frames == 0 || spokes_per_frame == 0) throw ConfigError("golden_angle_trajectory: empty trajectory");
    RadialTrajectory traj;
    traj.frames = frames;
    traj.samples_per_spoke = samples_per_spoke;
    traj.spokes_per_frame = spokes_per_frame;
    traj.coords.resize(frames);
    const double step = increment_deg * std::numbers::pi / 180.0;
    const std::size_t half = samples_per_spoke / 2;
    for (std::size_t f = 0; f < frames; ++f) {
        auto& pts = traj.coords[f];
        pts.reserve(spokes_per_frame * samples_per_spoke);
        for (std::size_t s = 0; s < spokes_per_frame; ++s) {
            const auto index = static_cast<double>(f * spokes_per_frame + s);
            const double angle = std::fmod(index * step, std::numbers::pi);
            traj.angles.push_back(angle);
            const double ca = std::cos(angle), sa = std::sin(angle);
            for (std::size_t m = 0; m < samples_per_spoke; ++m) {
                // Integer offset from the centre keeps the centre sample exactly zero.
                const double r = 0.5 * (static_cast<double>(m) - static_cast<double>(half)) / static_cast<double>(half);
                pts.push_back({r * ca, r * sa});
            }
        }
    }
    return traj;
}

/// Radial density compensation for one frame: ramp |k| scaled by each
/// spoke's share of the angular range. The centre sample gets the area of the
/// central disk it represents, shared across the frame's spokes.
inline std::vector<double> radial_dcf(const RadialTrajectory& traj, std::size_t frame) {
    const std::size_t n = traj.spokes_per_frame, m = traj.samples_per_spoke, half = m / 2;
    const double dr = 0.5 / static_cast<double>(half);

    std::vector<double> angular(n, 1.0);
    if (n > 1) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto angle = [&](std::size_t s) { return traj.spoke_angle(frame, s); };
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return angle(a) < angle(b); });
        const double nominal = std::numbers::pi / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double next = i + 1 < n ? angle(order[i + 1]) : angle(order[0]) + std::numbers::pi;
            const double prev = i > 0 ? angle(order[i - 1]) : angle(order[n - 1]) - std::numbers::pi;
            angular[order[i]] = 0.5 * (next - prev) / nominal;
        }
    }
    std::vector<double> w;
    w.reserve(n * m);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < m; ++j) {
            const double r = std::abs(static_cast<double>(j) - static_cast<double>(half)) * dr;
            w.push_back((j == half ? 0.25 * dr : r) * angular[s]);
        }
    }
    return w;
}

/// Writes `frame,kx,ky` rows.
inline void save_trajectory_csv(const std::string& path, const RadialTrajectory& traj) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "frame,kx,ky\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t f = 0; f < traj.frames; ++f) {
        for (const auto& k : traj.coords[f]) os << f << ',' << k.kx << ',' << k.ky << '\n';
    }
    if (!os) throw DataError("write failed: " + path);
}

}  // namespace mrf
