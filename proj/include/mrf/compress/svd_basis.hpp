#pragma once

// Low-rank temporal subspace from a simulated dictionary.

#include <Eigen/Dense>

#include <complex>
#include <vector>

#include "mrf/core/error.hpp"
#include "mrf/sim/bloch.hpp"
#include "mrf/tensor/tensor.hpp"

namespace mrf {

struct TemporalBasis {
    Eigen::MatrixXd vectors;               // T × r, orthonormal columns
    std::vector<double> singular_values;   // all of them, descending
    std::size_t rank = 0;

    std::size_t frames() const { return static_cast<std::size_t>(vectors.rows()); }

    /// Σ_{i<r} σᵢ² / Σ σᵢ².
    double captured_energy() const { return captured_energy(rank); }
    double captured_energy(std::size_t r) const {
        double head = 0.0, total = 0.0;
        for (std::size_t i = 0; i < singular_values.size(); ++i) {
            const double e = singular_values[i] * singular_values[i];
            total += e;
            if (i < r) head += e;
        }
        return total > 0.0 ? head / total : 1.0;
    }
};

/// Right-singular basis of the real/imag-stacked dictionary (2·n_atoms × T).
/// Column signs are fixed so each column's largest-magnitude entry is positive.
inline TemporalBasis build_basis(const Eigen::MatrixXcd& dictionary, std::size_t r) {
    const auto n = static_cast<std::size_t>(dictionary.rows()), t = static_cast<std::size_t>(dictionary.cols());
    if (r < 1 || r > std::min(n, t)) {
        throw ConfigError("build_basis: rank " + std::to_string(r) + " outside [1, " + std::to_string(std::min(n, t)) + "]");
    }
    Eigen::MatrixXd stacked(2 * dictionary.rows(), dictionary.cols());
    stacked.topRows(dictionary.rows()) = dictionary.real();
    stacked.bottomRows(dictionary.rows()) = dictionary.imag();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);

    TemporalBasis basis;
    basis.rank = r;
    basis.vectors = svd.matrixV().leftCols(static_cast<Eigen::Index>(r));
    for (Eigen::Index j = 0; j < basis.vectors.cols(); ++j) {
        Eigen::Index arg = 0;
        basis.vectors.col(j).cwiseAbs().maxCoeff(&arg);
        if (basis.vectors(arg, j) < 0.0) basis.vectors.col(j) *= -1.0;
    }
    const auto& sv = svd.singularValues();
    basis.singular_values.assign(sv.data(), sv.data() + sv.size());
    return basis;
}

/// Per-voxel projection onto the basis: channels [0, r) hold Vᵀ Re(s),
/// channels [r, 2r) hold Vᵀ Im(s). Output shape [2r, H, W].
inline Tensor<double> project_series(const FingerprintSeries& series, const TemporalBasis& basis) {
    if (series.t_frames != basis.frames()) {
        throw DataError("project_series: series has " + std::to_string(series.t_frames) + " frames, basis " +
                        std::to_string(basis.frames()));
    }
    const auto v = static_cast<Eigen::Index>(series.voxels()), t = static_cast<Eigen::Index>(series.t_frames);
    // Frame-major storage is a T × V column-major matrix.
    Eigen::Map<const Eigen::MatrixXcd> s(series.data.data(), v, t);
    const Eigen::MatrixXd re = Eigen::MatrixXd(s.real()) * basis.vectors;  // V × r
    const Eigen::MatrixXd im = Eigen::MatrixXd(s.imag()) * basis.vectors;
    const std::size_t r = basis.rank, hw = series.voxels();
    std::vector<double> out(2 * r * hw);
    for (std::size_t c = 0; c < r; ++c) {
        for (std::size_t i = 0; i < hw; ++i) {
            out[c * hw + i] = re(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
            out[(r + c) * hw + i] = im(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        }
    }
    return Tensor<double>(Shape{2 * r, series.rows, series.cols}, std::move(out));
}

}  // namespace mrf
