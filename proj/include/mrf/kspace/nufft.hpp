#pragma once

// Non-uniform Fourier transform pair on a centred pixel grid.
//
//   forward:  S(k)   = Σ_x img(x) exp(-2πi k·x)
//   adjoint:  img(x) = Σ_k w(k) S(k) exp(+2πi k·x)
//
// x = (col - W/2, row - H/2) in pixels, k in cycles per pixel. Two paths are
// provided: exact direct summation, and Kaiser-Bessel gridding onto an
// oversampled Cartesian grid followed by an FFT.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "mrf/core/error.hpp"
#include "mrf/kspace/trajectory.hpp"

namespace mrf {

using cdouble = std::complex<double>;

/// Complex image, row-major rows × cols.
struct ComplexImage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<cdouble> values;

    ComplexImage() = default;
    ComplexImage(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c) {}
    cdouble& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    const cdouble& operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

enum class NufftPath { kDirect, kGridding };

namespace detail {

inline void check_coords(std::span<const KPoint> coords) {
    constexpr double limit = 0.5 + 1e-12;
    for (const auto& k : coords) {
        if (!(std::abs(k.kx) <= limit && std::abs(k.ky) <= limit)) {
            throw DataError("nufft: k-space coordinate outside [-0.5, 0.5]");
        }
    }
}

inline double centred(std::size_t i, std::size_t n) { return static_cast<double>(i) - static_cast<double>(n / 2); }

struct FftwDeleter {
    void operator()(fftw_complex* p) const { fftw_free(p); }
};

class FftwPlan {
public:
    FftwPlan() = default;
    FftwPlan(int rows, int cols, fftw_complex* buf, int sign)
        : plan_(fftw_plan_dft_2d(rows, cols, buf, buf, sign, FFTW_ESTIMATE)) {
        if (!plan_) throw NumericError("fftw: plan creation failed");
    }
    FftwPlan(FftwPlan&& o) noexcept : plan_(o.plan_) { o.plan_ = nullptr; }
    FftwPlan& operator=(FftwPlan&& o) noexcept {
        std::swap(plan_, o.plan_);
        return *this;
    }
    FftwPlan(const FftwPlan&) = delete;
    FftwPlan& operator=(const FftwPlan&) = delete;
    ~FftwPlan() {
        if (plan_) fftw_destroy_plan(plan_);
    }
    void execute() const { fftw_execute(plan_); }

private:
    fftw_plan plan_ = nullptr;
};

}  // namespace detail

/// Exact forward transform by direct summation.
inline std::vector<cdouble> nufft_forward_direct(const ComplexImage& img, std::span<const KPoint> coords) {
    detail::check_coords(coords);
    std::vector<cdouble> out(coords.size());
    std::vector<cdouble> ex(img.cols), ey(img.rows);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        for (std::size_t c = 0; c < img.cols; ++c) ex[c] = std::polar(1.0, -2.0 * std::numbers::pi * coords[i].kx * detail::centred(c, img.cols));
        for (std::size_t r = 0; r < img.rows; ++r) ey[r] = std::polar(1.0, -2.0 * std::numbers::pi * coords[i].ky * detail::centred(r, img.rows));
        cdouble acc = 0.0;
        for (std::size_t r = 0; r < img.rows; ++r) {
            cdouble row = 0.0;
            for (std::size_t c = 0; c < img.cols; ++c) row += img(r, c) * ex[c];
            acc += row * ey[r];
        }
        out[i] = acc;
    }
    return out;
}

/// Exact weighted adjoint by direct summation.
inline ComplexImage nufft_adjoint_direct(std::span<const cdouble> samples, std::span<const KPoint> coords,
                                         std::span<const double> dcf, std::size_t rows, std::size_t cols) {
    if (samples.size() != coords.size() || dcf.size() != samples.size()) {
        throw DataError("nufft_adjoint: samples, coordinates and dcf lengths differ");
    }
    detail::check_coords(coords);
    ComplexImage img(rows, cols);
    std::vector<cdouble> ex(cols), ey(rows);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const cdouble ws = dcf[i] * samples[i];
        if (ws == cdouble(0.0)) continue;
        for (std::size_t c = 0; c < cols; ++c) ex[c] = std::polar(1.0, 2.0 * std::numbers::pi * coords[i].kx * detail::centred(c, cols));
        for (std::size_t r = 0; r < rows; ++r) ey[r] = std::polar(1.0, 2.0 * std::numbers::pi * coords[i].ky * detail::centred(r, rows));
        for (std::size_t r = 0; r < rows; ++r) {
            const cdouble wr = ws * ey[r];
            for (std::size_t c = 0; c < cols; ++c) img(r, c) += wr * ex[c];
        }
    }
    return img;
}

/// Gridding NUFFT with a separable Kaiser-Bessel kernel. Holds FFTW plans and
/// scratch for one image size; not thread-safe.
class GriddingNufft {
public:
    struct Options {
        double oversampling = 2.0;
        int kernel_width = 4;  // in oversampled grid cells
    };

    GriddingNufft(std::size_t rows, std::size_t cols) : GriddingNufft(rows, cols, Options{}) {}

    GriddingNufft(std::size_t rows, std::size_t cols, Options opt)
        : rows_(rows), cols_(cols), opt_(opt) {
        if (rows == 0 || cols == 0) throw ConfigError("nufft: empty image");
        if (opt.oversampling < 1.0 || opt.kernel_width < 2) throw ConfigError("nufft: bad gridding options");
        grid_rows_ = static_cast<std::size_t>(std::ceil(opt.oversampling * static_cast<double>(rows)));
        grid_cols_ = static_cast<std::size_t>(std::ceil(opt.oversampling * static_cast<double>(cols)));
        const double sigma = opt.oversampling, w = opt.kernel_width;
        // Beatty et al. choice of the shape parameter for a given width and oversampling.
        beta_ = std::numbers::pi * std::sqrt(w * w / (sigma * sigma) * (sigma - 0.5) * (sigma - 0.5) - 0.8);
        buf_.reset(fftw_alloc_complex(grid_rows_ * grid_cols_));
        forward_plan_ = detail::FftwPlan(static_cast<int>(grid_rows_), static_cast<int>(grid_cols_), buf_.get(), FFTW_FORWARD);
        backward_plan_ = detail::FftwPlan(static_cast<int>(grid_rows_), static_cast<int>(grid_cols_), buf_.get(), FFTW_BACKWARD);
        deapod_rows_ = deapodization(rows_, grid_rows_);
        deapod_cols_ = deapodization(cols_, grid_cols_);
    }

    double beta() const { return beta_; }

    /// Kernel value at offset `u` grid cells from the sample (zero outside the support).
    double kernel(double u) const {
        const double half = 0.5 * opt_.kernel_width;
        if (std::abs(u) > half) return 0.0;
        const double t = u / half;
        return std::cyl_bessel_i(0.0, beta_ * std::sqrt(std::max(0.0, 1.0 - t * t)));
    }

    std::vector<cdouble> forward(const ComplexImage& img, std::span<const KPoint> coords) {
        if (img.rows != rows_ || img.cols != cols_) throw DataError("nufft: image size does not match the plan");
        detail::check_coords(coords);
        clear_grid();
        for (std::size_t r = 0; r < rows_; ++r) {
            const std::size_t gr = wrap(static_cast<long>(r) - static_cast<long>(rows_ / 2), grid_rows_);
            for (std::size_t c = 0; c < cols_; ++c) {
                const std::size_t gc = wrap(static_cast<long>(c) - static_cast<long>(cols_ / 2), grid_cols_);
                const cdouble v = img(r, c) / (deapod_rows_[r] * deapod_cols_[c]);
                buf_.get()[gr * grid_cols_ + gc][0] = v.real();
                buf_.get()[gr * grid_cols_ + gc][1] = v.imag();
            }
        }
        forward_plan_.execute();
        std::vector<cdouble> out(coords.size());
        for (std::size_t i = 0; i < coords.size(); ++i) {
            cdouble acc = 0.0;
            visit_neighbourhood(coords[i], [&](std::size_t idx, double weight) {
                acc += weight * cdouble(buf_.get()[idx][0], buf_.get()[idx][1]);
            });
            out[i] = acc;
        }
        return out;
    }

    ComplexImage adjoint(std::span<const cdouble> samples, std::span<const KPoint> coords, std::span<const double> dcf) {
        if (samples.size() != coords.size() || dcf.size() != samples.size()) {
            throw DataError("nufft_adjoint: samples, coordinates and dcf lengths differ");
        }
        detail::check_coords(coords);
        clear_grid();
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const cdouble ws = dcf[i] * samples[i];
            visit_neighbourhood(coords[i], [&](std::size_t idx, double weight) {
                buf_.get()[idx][0] += weight * ws.real();
                buf_.get()[idx][1] += weight * ws.imag();
            });
        }
        backward_plan_.execute();
        ComplexImage img(rows_, cols_);
        for (std::size_t r = 0; r < rows_; ++r) {
            const std::size_t gr = wrap(static_cast<long>(r) - static_cast<long>(rows_ / 2), grid_rows_);
            for (std::size_t c = 0; c < cols_; ++c) {
                const std::size_t gc = wrap(static_cast<long>(c) - static_cast<long>(cols_ / 2), grid_cols_);
                const auto& g = buf_.get()[gr * grid_cols_ + gc];
                img(r, c) = cdouble(g[0], g[1]) / (deapod_rows_[r] * deapod_cols_[c]);
            }
        }
        return img;
    }

private:
    static std::size_t wrap(long i, std::size_t n) {
        const long m = static_cast<long>(n);
        return static_cast<std::size_t>(((i % m) + m) % m);
    }

    void clear_grid() {
        for (std::size_t i = 0; i < grid_rows_ * grid_cols_; ++i) buf_.get()[i][0] = buf_.get()[i][1] = 0.0;
    }

    // Continuous Fourier transform of the kernel at image position x, in the
    // sign convention that makes gridding equal to direct summation.
    std::vector<double> deapodization(std::size_t n, std::size_t grid) const {
        std::vector<double> out(n);
        const double w = opt_.kernel_width;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = detail::centred(i, n) / static_cast<double>(grid);
            const double a = std::numbers::pi * w * x;
            const double z2 = beta_ * beta_ - a * a;
            if (z2 > 0) {
                const double z = std::sqrt(z2);
                out[i] = w * std::sinh(z) / z;
            } else if (z2 < 0) {
                const double z = std::sqrt(-z2);
                out[i] = w * std::sin(z) / z;
            } else {
                out[i] = w;
            }
        }
        return out;
    }

    template <class F>
    void visit_neighbourhood(const KPoint& k, F&& f) const {
        const double half = 0.5 * opt_.kernel_width;
        const double ux = k.kx * static_cast<double>(grid_cols_), uy = k.ky * static_cast<double>(grid_rows_);
        const long cx0 = static_cast<long>(std::ceil(ux - half)), cx1 = static_cast<long>(std::floor(ux + half));
        const long cy0 = static_cast<long>(std::ceil(uy - half)), cy1 = static_cast<long>(std::floor(uy + half));
        for (long v = cy0; v <= cy1; ++v) {
            const double wy = kernel(uy - static_cast<double>(v));
            if (wy == 0.0) continue;
            const std::size_t row = wrap(v, grid_rows_) * grid_cols_;
            for (long u = cx0; u <= cx1; ++u) {
                const double wx = kernel(ux - static_cast<double>(u));
                if (wx == 0.0) continue;
                f(row + wrap(u, grid_cols_), wx * wy);
            }
        }
    }

    std::size_t rows_, cols_, grid_rows_ = 0, grid_cols_ = 0;
    Options opt_;
    double beta_ = 0.0;
    std::unique_ptr<fftw_complex, detail::FftwDeleter> buf_;
    detail::FftwPlan forward_plan_, backward_plan_;
    std::vector<double> deapod_rows_, deapod_cols_;
};

/// Forward transform through the requested path.
inline std::vector<cdouble> nufft_forward(const ComplexImage& img, std::span<const KPoint> coords,
                                          NufftPath path = NufftPath::kGridding) {
    if (path == NufftPath::kDirect) return nufft_forward_direct(img, coords);
    GriddingNufft op(img.rows, img.cols);
    return op.forward(img, coords);
}

/// Weighted adjoint through the requested path.
inline ComplexImage nufft_adjoint(std::span<const cdouble> samples, std::span<const KPoint> coords,
                                  std::span<const double> dcf, std::size_t rows, std::size_t cols,
                                  NufftPath path = NufftPath::kGridding) {
    if (path == NufftPath::kDirect) return nufft_adjoint_direct(samples, coords, dcf, rows, cols);
    GriddingNufft op(rows, cols);
    return op.adjoint(samples, coords, dcf);
}

}  // namespace mrf
