#pragma once

// Hard-pulse Bloch simulation of an IR-bSSFP fingerprinting train.
//
// Magnetisation starts at equilibrium (0, 0, 1). Each repetition applies an
// instantaneous rotation, relaxes/precesses exactly for TR/2, records the
// transverse magnetisation at TE = TR/2, then relaxes for the remaining TR/2.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mrf/core/error.hpp"
#include "mrf/phantom/phantom.hpp"
#include "mrf/sim/schedule.hpp"

namespace mrf {

using cdouble = std::complex<double>;

struct BlochTrace {
    std::vector<cdouble> signal;  // Mx + iMy at each echo, RF-cycle demodulated
    std::vector<double> mz;       // longitudinal magnetisation at each echo
    double max_norm = 0.0;        // largest |M| seen after any step
};

namespace detail {

using Vec3 = std::array<double, 3>;

// Right-handed rotation of m by `angle` about the transverse axis at `phase`.
inline Vec3 rotate_transverse(const Vec3& m, double angle, double phase) {
    const double ux = std::cos(phase), uy = std::sin(phase);
    const double c = std::cos(angle), s = std::sin(angle);
    const double dot = ux * m[0] + uy * m[1];
    // u × m with u = (ux, uy, 0)
    const Vec3 cross{uy * m[2], -ux * m[2], ux * m[1] - uy * m[0]};
    return {m[0] * c + cross[0] * s + ux * dot * (1.0 - c), m[1] * c + cross[1] * s + uy * dot * (1.0 - c),
            m[2] * c + cross[2] * s};
}

struct FreeEvolution {
    double e1, e2, cos_p, sin_p;

    FreeEvolution(double dt_ms, double t1, double t2, double b0_hz) {
        e1 = std::exp(-dt_ms / t1);
        e2 = std::exp(-dt_ms / t2);
        const double phi = 2.0 * std::numbers::pi * b0_hz * dt_ms * 1e-3;
        cos_p = std::cos(phi);
        sin_p = std::sin(phi);
    }

    void apply(Vec3& m) const {
        const double mx = m[0] * cos_p - m[1] * sin_p, my = m[0] * sin_p + m[1] * cos_p;
        m = {mx * e2, my * e2, 1.0 + (m[2] - 1.0) * e1};
    }
};

inline double norm3(const Vec3& m) { return std::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2]); }

}  // namespace detail

/// Full trace (signal and Mz at each echo). t1, t2 in ms; b0 in Hz.
inline BlochTrace bloch_simulate_trace(double t1, double t2, double b0, const SequenceSchedule& schedule) {
    if (!(t1 > 0.0) || !(t2 > 0.0)) throw DataError("bloch_simulate: relaxation times must be positive");
    const std::size_t n = schedule.size();
    if (schedule.trs_ms.size() != n) throw ConfigError("bloch_simulate: schedule length mismatch");

    constexpr double deg = std::numbers::pi / 180.0;
    BlochTrace out;
    out.signal.resize(n);
    out.mz.resize(n);
    detail::Vec3 m{0.0, 0.0, 1.0};
    if (schedule.inversion) {
        // sin(π) is not exactly zero in floating point; keep the ideal pulse exact.
        m = schedule.inversion_efficiency == 1.0
                ? detail::Vec3{0.0, 0.0, -1.0}
                : detail::rotate_transverse(m, schedule.inversion_efficiency * std::numbers::pi, 0.0);
    }
    out.max_norm = detail::norm3(m);

    double cached_tr = -1.0;
    detail::FreeEvolution half(1.0, t1, t2, b0);
    for (std::size_t k = 0; k < n; ++k) {
        const double tr = schedule.trs_ms[k];
        if (tr != cached_tr) {
            half = detail::FreeEvolution(0.5 * tr, t1, t2, b0);
            cached_tr = tr;
        }
        const double cycle = schedule.rf_phase_cycle_deg * deg * static_cast<double>(k);
        const double phase = schedule.rf_phase_offset_deg * deg + cycle;
        if (schedule.flip_angles_deg[k] != 0.0) m = detail::rotate_transverse(m, schedule.flip_angles_deg[k] * deg, phase);
        half.apply(m);
        out.signal[k] = cdouble(m[0], m[1]) * std::polar(1.0, -cycle);
        out.mz[k] = m[2];
        out.max_norm = std::max(out.max_norm, detail::norm3(m));
        half.apply(m);
        out.max_norm = std::max(out.max_norm, detail::norm3(m));
    }
    return out;
}

inline std::vector<cdouble> bloch_simulate(double t1, double t2, double b0, const SequenceSchedule& schedule) {
    return bloch_simulate_trace(t1, t2, b0, schedule).signal;
}

/// Complex T×H×W signal evolution, frame-major (data[t*H*W + r*W + c]).
struct FingerprintSeries {
    enum class Kind { kFullySampled, kAliased };

    std::size_t t_frames = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Kind kind = Kind::kFullySampled;
    std::vector<cdouble> data;

    FingerprintSeries() = default;
    FingerprintSeries(std::size_t t, std::size_t r, std::size_t c, Kind k)
        : t_frames(t), rows(r), cols(c), kind(k), data(t * r * c) {}

    std::size_t voxels() const { return rows * cols; }
    cdouble& at(std::size_t t, std::size_t voxel) { return data[t * voxels() + voxel]; }
    const cdouble& at(std::size_t t, std::size_t voxel) const { return data[t * voxels() + voxel]; }

    std::vector<cdouble> voxel_series(std::size_t voxel) const {
        std::vector<cdouble> s(t_frames);
        for (std::size_t t = 0; t < t_frames; ++t) s[t] = at(t, voxel);
        return s;
    }
};

/// Simulates every masked voxel and keeps the first `t_trunc` frames.
/// Background voxels stay zero.
inline FingerprintSeries simulate_image_series(const TissueMap& maps, const SequenceSchedule& schedule, std::size_t t_trunc) {
    if (t_trunc < 1 || t_trunc > schedule.size()) {
        throw ConfigError("simulate_image_series: t_trunc " + std::to_string(t_trunc) + " outside [1, " +
                          std::to_string(schedule.size()) + "]");
    }
    schedule.validate();
    FingerprintSeries series(t_trunc, maps.rows(), maps.cols(), FingerprintSeries::Kind::kFullySampled);
    for (std::size_t v = 0; v < series.voxels(); ++v) {
        if (!maps.mask.values[v]) continue;
        const auto sig = bloch_simulate(maps.t1.values[v], maps.t2.values[v], maps.b0.values[v], schedule);
        for (std::size_t t = 0; t < t_trunc; ++t) series.at(t, v) = sig[t];
    }
    return series;
}

}  // namespace mrf
