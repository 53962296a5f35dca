#pragma once

// Four-direction 2D selective scan. The H×W plane is flattened row-major
// and scanned along four fixed orders; the four outputs are summed.
//   0 row-forward   p = 0, 1, …, HW−1
//   1 row-backward  reverse of 0
//   2 col-forward   p = r·W + c for c = 0..W−1, r = 0..H−1
//   3 col-backward  reverse of 2

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mrf/core/error.hpp"
#include "mrf/ssm/selective_scan.hpp"

namespace mrf::ssm {

inline constexpr std::size_t kDirections = 4;

enum class Direction : std::size_t { kRowForward = 0, kRowBackward = 1, kColForward = 2, kColBackward = 3 };

inline const char* direction_name(std::size_t d) {
    static constexpr std::array<const char*, kDirections> names{"row_fwd", "row_bwd", "col_fwd", "col_bwd"};
    return names.at(d);
}

/// Visiting order of flattened positions for direction `d` over an h×w plane.
inline std::vector<std::size_t> scan_order(std::size_t d, std::size_t h, std::size_t w) {
    std::vector<std::size_t> order;
    order.reserve(h * w);
    if (d == 0 || d == 1) {
        for (std::size_t p = 0; p < h * w; ++p) order.push_back(p);
    } else if (d == 2 || d == 3) {
        for (std::size_t c = 0; c < w; ++c) {
            for (std::size_t r = 0; r < h; ++r) order.push_back(r * w + c);
        }
    } else {
        throw ConfigError("scan_order: direction must be in [0, 4)");
    }
    if (d == 1 || d == 3) std::reverse(order.begin(), order.end());
    return order;
}

struct Ss2dConfig {
    std::size_t embed_dim = 0;
    std::size_t state_size = 10;
    double expand_ratio = 1.2;

    /// Channel count inside the scan: round(expand_ratio · embed_dim).
    std::size_t inner_dim() const {
        const auto d = static_cast<std::size_t>(std::lround(expand_ratio * static_cast<double>(embed_dim)));
        return d < 1 ? 1 : d;
    }
    void validate() const {
        if (embed_dim == 0) throw ConfigError("Ss2dConfig: embed_dim must be positive");
        if (state_size == 0) throw ConfigError("Ss2dConfig: state_size must be positive");
        if (!(expand_ratio > 0.0)) throw ConfigError("Ss2dConfig: expand_ratio must be positive");
    }
};

template <class T>
using Ss2dParams = std::array<SsmParams<T>, kDirections>;

template <class T>
Ss2dParams<T> init_ss2d_params(std::size_t channels, std::size_t states, std::mt19937_64& rng) {
    Ss2dParams<T> p;
    for (auto& d : p) d = init_ssm_params<T>(channels, states, rng);
    return p;
}

template <class T>
ParameterSet<T> ss2d_parameters(const Ss2dParams<T>& p) {
    ParameterSet<T> ps;
    for (std::size_t d = 0; d < kDirections; ++d) ps.append(direction_name(d), p[d].parameters());
    return ps;
}

/// One direction over x[B,D,H,W] (channels-first sequences of length HW).
template <class T>
Tensor<T> ss2d_direction(const SsmParams<T>& p, const Tensor<T>& x, std::size_t d) {
    const std::size_t nb = x.dim(0), nd = x.dim(1), h = x.dim(2), w = x.dim(3), ns = p.states();
    const std::size_t nl = h * w;
    auto project = [&](const Tensor<T>& wt, const Tensor<T>& b, std::size_t out) {
        return ops::reshape(ops::conv2d(x, ops::reshape(wt, {out, nd, 1, 1}), b), {nb, out, nl});
    };
    auto bm = project(p.w_b, p.b_b, ns);
    auto cm = project(p.w_c, p.b_c, ns);
    auto dt = ops::softplus(project(p.w_dt, p.b_dt, nd));
    auto y = selective_scan(ops::reshape(x, {nb, nd, nl}), dt, p.a_log, bm, cm, scan_order(d, h, w));
    return ops::reshape(y, x.shape());
}

/// x[B,D,H,W] -> [B,D,H,W], the sum of the four directional scans.
template <class T>
Tensor<T> ss2d(const Tensor<T>& x, const Ss2dParams<T>& params) {
    if (x.rank() != 4) throw DataError("ss2d: input must be [B,D,H,W], got " + shape_str(x.shape()));
    for (const auto& p : params) {
        if (p.channels() != x.dim(1)) throw DataError("ss2d: parameter channels differ from input channels");
    }
    Tensor<T> out = ss2d_direction(params[0], x, 0);
    for (std::size_t d = 1; d < kDirections; ++d) out = ops::add(out, ss2d_direction(params[d], x, d));
    return out;
}

}  // namespace mrf::ssm
