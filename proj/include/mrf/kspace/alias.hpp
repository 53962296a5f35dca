#pragma once

#include <numbers>
#include <numeric>
#include <optional>

#include "mrf/core/error.hpp"
#include "mrf/kspace/nufft.hpp"
#include "mrf/kspace/trajectory.hpp"
#include "mrf/sim/bloch.hpp"

namespace mrf {

/// Gain applied after the density-compensated adjoint so that Σ dcf acts as
/// the area of the sampled disk (|k| <= 0.5): a densely sampled frame then
/// round-trips with unit gain.
inline double alias_gain(std::span<const double> dcf) {
    const double total = std::accumulate(dcf.begin(), dcf.end(), 0.0);
    if (!(total > 0.0)) throw NumericError("alias: density compensation sums to zero");
    return 0.25 * std::numbers::pi / total;
}

inline ComplexImage frame_image(const FingerprintSeries& s, std::size_t t) {
    ComplexImage img(s.rows, s.cols);
    for (std::size_t v = 0; v < s.voxels(); ++v) img.values[v] = s.at(t, v);
    return img;
}

/// Undersamples each frame along its spokes and reconstructs it with the
/// density-compensated adjoint.
inline FingerprintSeries alias_series(const FingerprintSeries& series, const RadialTrajectory& traj,
                                      NufftPath path = NufftPath::kGridding) {
    if (series.t_frames != traj.frames) {
        throw DataError("alias_series: series has " + std::to_string(series.t_frames) + " frames, trajectory " +
                        std::to_string(traj.frames));
    }
    FingerprintSeries out(series.t_frames, series.rows, series.cols, FingerprintSeries::Kind::kAliased);
    std::optional<GriddingNufft> op;
    if (path == NufftPath::kGridding) op.emplace(series.rows, series.cols);
    for (std::size_t t = 0; t < series.t_frames; ++t) {
        const auto img = frame_image(series, t);
        const auto& coords = traj.frame(t);
        const auto dcf = radial_dcf(traj, t);
        const double gain = alias_gain(dcf);
        ComplexImage rec;
        if (op) {
            rec = op->adjoint(op->forward(img, coords), coords, dcf);
        } else {
            rec = nufft_adjoint_direct(nufft_forward_direct(img, coords), coords, dcf, series.rows, series.cols);
        }
        for (std::size_t v = 0; v < series.voxels(); ++v) out.at(t, v) = gain * rec.values[v];
    }
    return out;
}

}  // namespace mrf
