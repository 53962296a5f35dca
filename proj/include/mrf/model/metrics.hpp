#pragma once

// Masked image-quality metrics for parameter maps.
//   RMSE = √(mean_mask (p − t)²)          NMSE = Σ_mask (p − t)² / Σ_mask t²
//   PSNR = 20·log10(max_mask t / RMSE)    (capped at kPsnrCap)
//   SSIM: 11×11 Gaussian window (σ 1.5), K1 0.01, K2 0.03, L = masked range
//         of t, averaged over windows centred on masked voxels. Voxels
//         outside the mask are taken as 0 in both maps; windows are
//         truncated at the image border and their weights renormalised.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "mrf/core/error.hpp"
#include "mrf/core/grid.hpp"

namespace mrf::model {

inline constexpr double kPsnrCap = 200.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

struct Metrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double rmse = 0.0;
    double nmse = 0.0;
};

namespace detail {

inline std::size_t require_mask(const Grid<double>& pred, const Grid<double>& truth, const Grid<std::uint8_t>& mask) {
    if (!pred.same_shape(truth) || !pred.same_shape(mask)) throw DataError("metrics: map shapes differ");
    const auto n = static_cast<std::size_t>(std::count(mask.values.begin(), mask.values.end(), 1));
    if (n == 0) throw DataError("metrics: empty mask");
    return n;
}

}  // namespace detail

inline double masked_rmse(const Grid<double>& pred, const Grid<double>& truth, const Grid<std::uint8_t>& mask) {
    const std::size_t n = detail::require_mask(pred, truth, mask);
    double se = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.values[i]) se += (pred.values[i] - truth.values[i]) * (pred.values[i] - truth.values[i]);
    }
    return std::sqrt(se / static_cast<double>(n));
}

inline double masked_nmse(const Grid<double>& pred, const Grid<double>& truth, const Grid<std::uint8_t>& mask) {
    detail::require_mask(pred, truth, mask);
    double se = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.values[i]) continue;
        se += (pred.values[i] - truth.values[i]) * (pred.values[i] - truth.values[i]);
        ref += truth.values[i] * truth.values[i];
    }
    if (!(ref > 0.0)) throw NumericError("metrics: NMSE undefined for an all-zero reference");
    return se / ref;
}

inline double masked_psnr(const Grid<double>& pred, const Grid<double>& truth, const Grid<std::uint8_t>& mask) {
    const double rmse = masked_rmse(pred, truth, mask);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.values[i]) peak = std::max(peak, truth.values[i]);
    }
    if (rmse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 20.0 * std::log10(peak / rmse));
}

inline double masked_ssim(const Grid<double>& pred, const Grid<double>& truth, const Grid<std::uint8_t>& mask) {
    detail::require_mask(pred, truth, mask);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.values[i]) continue;
        lo = std::min(lo, truth.values[i]);
        hi = std::max(hi, truth.values[i]);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    const double c1 = (kSsimK1 * range) * (kSsimK1 * range), c2 = (kSsimK2 * range) * (kSsimK2 * range);
    const auto half = static_cast<std::ptrdiff_t>(kSsimWindow / 2);
    double g[kSsimWindow];
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
        g[k + half] = std::exp(-static_cast<double>(k * k) / (2.0 * kSsimSigma * kSsimSigma));
    }
    const auto rows = static_cast<std::ptrdiff_t>(mask.rows), cols = static_cast<std::ptrdiff_t>(mask.cols);
    auto value = [&](const Grid<double>& m, std::ptrdiff_t r, std::ptrdiff_t c) {
        const auto i = static_cast<std::size_t>(r * cols + c);
        return mask.values[i] ? m.values[i] : 0.0;
    };
    double total = 0.0;
    std::size_t count = 0;
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        for (std::ptrdiff_t c = 0; c < cols; ++c) {
            if (!mask.values[static_cast<std::size_t>(r * cols + c)]) continue;
            double wsum = 0.0, mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (std::ptrdiff_t dr = -half; dr <= half; ++dr) {
                const std::ptrdiff_t rr = r + dr;
                if (rr < 0 || rr >= rows) continue;
                for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
                    const std::ptrdiff_t cc = c + dc;
                    if (cc < 0 || cc >= cols) continue;
                    const double w = g[dr + half] * g[dc + half];
                    const double x = value(pred, rr, cc), y = value(truth, rr, cc);
                    wsum += w;
                    mx += w * x;
                    my += w * y;
                    sxx += w * x * x;
                    syy += w * y * y;
                    sxy += w * x * y;
                }
            }
            mx /= wsum;
            my /= wsum;
            const double vx = sxx / wsum - mx * mx, vy = syy / wsum - my * my;
            const double cxy = sxy / wsum - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

inline Metrics evaluate_map(const Grid<double>& pred, const Grid<double>& truth, const Grid<std::uint8_t>& mask) {
    return {masked_psnr(pred, truth, mask), masked_ssim(pred, truth, mask), masked_rmse(pred, truth, mask),
            masked_nmse(pred, truth, mask)};
}

}  // namespace mrf::model
