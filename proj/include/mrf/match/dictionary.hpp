#pragma once

// Dictionary generation over a (T1, T2, B0) grid and voxelwise matching by
// the magnitude of the normalised complex inner product.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "mrf/compress/svd_basis.hpp"
#include "mrf/core/error.hpp"
#include "mrf/core/grid.hpp"
#include "mrf/sim/bloch.hpp"

namespace mrf {

struct DictionaryGrid {
    std::vector<double> t1_ms;
    std::vector<double> t2_ms;
    std::vector<double> b0_hz{0.0};
};

struct AtomParams {
    double t1;
    double t2;
    double b0;
};

struct Dictionary {
    Eigen::MatrixXcd atoms;  // n_atoms × T, unit-norm rows
    std::vector<AtomParams> params;
    DictionaryGrid grid;

    std::size_t size() const { return params.size(); }
    std::size_t frames() const { return static_cast<std::size_t>(atoms.cols()); }
};

/// `count` values spaced geometrically from lo to hi inclusive.
inline std::vector<double> log_axis(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0) || !(hi >= lo) || count == 0) throw ConfigError("log_axis: need 0 < lo <= hi and count >= 1");
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double f = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        v[i] = lo * std::pow(hi / lo, f);
    }
    return v;
}

/// One atom per grid point with t1 > t2, simulated for the first t_trunc frames.
inline Dictionary build_dictionary(const DictionaryGrid& grid, const SequenceSchedule& schedule, std::size_t t_trunc) {
    if (grid.t1_ms.empty() || grid.t2_ms.empty() || grid.b0_hz.empty()) throw ConfigError("build_dictionary: empty axis");
    if (t_trunc < 1 || t_trunc > schedule.size()) throw ConfigError("build_dictionary: t_trunc out of range");
    schedule.validate();
    Dictionary d;
    d.grid = grid;
    for (double t1 : grid.t1_ms) {
        for (double t2 : grid.t2_ms) {
            if (!(t2 > 0.0) || t2 >= t1) continue;
            for (double b0 : grid.b0_hz) d.params.push_back({t1, t2, b0});
        }
    }
    if (d.params.empty()) throw DataError("build_dictionary: no physically valid (t1 > t2) grid points");
    d.atoms.resize(static_cast<Eigen::Index>(d.params.size()), static_cast<Eigen::Index>(t_trunc));
    for (std::size_t a = 0; a < d.params.size(); ++a) {
        const auto sig = bloch_simulate(d.params[a].t1, d.params[a].t2, d.params[a].b0, schedule);
        double norm = 0.0;
        for (std::size_t t = 0; t < t_trunc; ++t) norm += std::norm(sig[t]);
        norm = std::sqrt(norm);
        if (!(norm > 0.0)) throw NumericError("build_dictionary: zero-energy atom");
        for (std::size_t t = 0; t < t_trunc; ++t) {
            d.atoms(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(t)) = sig[t] / norm;
        }
    }
    return d;
}

struct MatchResult {
    Grid<double> t1;
    Grid<double> t2;
    Grid<double> correlation;
    std::vector<std::ptrdiff_t> atom_index;  // -1 for background
};

namespace detail {

// Winner per column of |scores| with ties going to the lowest atom index.
inline MatchResult select_atoms(const Eigen::MatrixXcd& scores, const Eigen::VectorXd& signal_norms,
                                const std::vector<AtomParams>& params, const Grid<std::uint8_t>& mask) {
    MatchResult r{Grid<double>(mask.rows, mask.cols), Grid<double>(mask.rows, mask.cols),
                  Grid<double>(mask.rows, mask.cols), std::vector<std::ptrdiff_t>(mask.size(), -1)};
    Eigen::Index col = 0;
    for (std::size_t v = 0; v < mask.size(); ++v) {
        if (!mask.values[v]) continue;
        const double norm = signal_norms(col);
        if (norm > 0.0) {
            Eigen::Index best = 0;
            double best_val = -1.0;
            for (Eigen::Index a = 0; a < scores.rows(); ++a) {
                const double m = std::abs(scores(a, col));
                if (m > best_val) {
                    best_val = m;
                    best = a;
                }
            }
            r.atom_index[v] = best;
            r.t1.values[v] = params[static_cast<std::size_t>(best)].t1;
            r.t2.values[v] = params[static_cast<std::size_t>(best)].t2;
            r.correlation.values[v] = best_val / norm;
        }
        ++col;
    }
    return r;
}

// Masked voxel signals as columns of a T × n_masked matrix.
inline Eigen::MatrixXcd masked_signals(const FingerprintSeries& series, const Grid<std::uint8_t>& mask) {
    if (mask.rows != series.rows || mask.cols != series.cols) throw DataError("match: mask shape differs from series");
    std::size_t n = 0;
    for (auto m : mask.values) n += m ? 1 : 0;
    Eigen::MatrixXcd s(static_cast<Eigen::Index>(series.t_frames), static_cast<Eigen::Index>(n));
    Eigen::Index col = 0;
    for (std::size_t v = 0; v < mask.size(); ++v) {
        if (!mask.values[v]) continue;
        for (std::size_t t = 0; t < series.t_frames; ++t) s(static_cast<Eigen::Index>(t), col) = series.at(t, v);
        ++col;
    }
    return s;
}

}  // namespace detail

/// Matches every masked voxel against every atom. Voxels with zero signal
/// and background voxels map to zero.
inline MatchResult match(const FingerprintSeries& series, const Dictionary& dict, const Grid<std::uint8_t>& mask) {
    if (series.t_frames != dict.frames()) {
        throw DataError("match: series has " + std::to_string(series.t_frames) + " frames, dictionary " +
                        std::to_string(dict.frames()));
    }
    const Eigen::MatrixXcd s = detail::masked_signals(series, mask);
    const Eigen::MatrixXcd scores = dict.atoms.conjugate() * s;
    return detail::select_atoms(scores, s.colwise().norm().transpose(), dict.params, mask);
}

/// Dictionary compressed into a temporal subspace: rows of atoms·V,
/// renormalised to unit length.
struct SubspaceDictionary {
    Eigen::MatrixXcd atoms;  // n_atoms × r
    std::vector<AtomParams> params;
    TemporalBasis basis;
};

inline SubspaceDictionary compress_dictionary(const Dictionary& dict, const TemporalBasis& basis) {
    if (basis.frames() != dict.frames()) throw DataError("compress_dictionary: basis length differs from atoms");
    Eigen::MatrixXcd atoms = dict.atoms * basis.vectors.cast<std::complex<double>>();
    for (Eigen::Index a = 0; a < atoms.rows(); ++a) {
        const double n = atoms.row(a).norm();
        if (!(n > 0.0)) throw NumericError("compress_dictionary: atom orthogonal to the basis");
        atoms.row(a) /= n;
    }
    return {std::move(atoms), dict.params, basis};
}

/// Matching with both atoms and signals projected onto the basis.
inline MatchResult match_subspace(const FingerprintSeries& series, const SubspaceDictionary& dict,
                                  const Grid<std::uint8_t>& mask) {
    if (series.t_frames != dict.basis.frames()) throw DataError("match_subspace: temporal length mismatch");
    const Eigen::MatrixXcd s = dict.basis.vectors.transpose().cast<std::complex<double>>() * detail::masked_signals(series, mask);
    const Eigen::MatrixXcd scores = dict.atoms.conjugate() * s;
    return detail::select_atoms(scores, s.colwise().norm().transpose(), dict.params, mask);
}

/// Matching of stored projections [2r, H, W] (channels [0, r) real,
/// [r, 2r) imaginary parts of Vᵀs); equivalent to match_subspace on the
/// series they came from.
inline MatchResult match_projected(const Tensor<double>& coeffs, const SubspaceDictionary& dict,
                                   const Grid<std::uint8_t>& mask) {
    const std::size_t r = dict.basis.rank;
    if (coeffs.rank() != 3 || coeffs.dim(0) != 2 * r) {
        throw DataError("match_projected: expected [" + std::to_string(2 * r) + ",H,W] coefficients, got " +
                        shape_str(coeffs.shape()));
    }
    if (coeffs.dim(1) != mask.rows || coeffs.dim(2) != mask.cols) throw DataError("match_projected: mask shape differs");
    const std::size_t hw = mask.size();
    const auto n = static_cast<Eigen::Index>(std::count(mask.values.begin(), mask.values.end(), 1));
    Eigen::MatrixXcd s(static_cast<Eigen::Index>(r), n);
    Eigen::Index col = 0;
    for (std::size_t v = 0; v < hw; ++v) {
        if (!mask.values[v]) continue;
        for (std::size_t k = 0; k < r; ++k) s(static_cast<Eigen::Index>(k), col) = {coeffs[k * hw + v], coeffs[(r + k) * hw + v]};
        ++col;
    }
    const Eigen::MatrixXcd scores = dict.atoms.conjugate() * s;
    return detail::select_atoms(scores, s.colwise().norm().transpose(), dict.params, mask);
}

}  // namespace mrf
