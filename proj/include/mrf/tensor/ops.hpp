#pragma once

// Differentiable primitives. Layout is row-major; image tensors are NCHW.
// None of these mutate their inputs.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mrf/tensor/tensor.hpp"

namespace mrf::ops {

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DataError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    }
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw DataError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(a.shape()));
    }
}

template <class T>
T gelu_value(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_slope(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    return cdf + x * pdf;
}

template <class T>
T sigmoid_value(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
T softplus_value(T x) {
    return x > T(20) ? x : std::log1p(std::exp(x));
}

// Elementwise unary op with a derivative expressed in terms of (x, y).
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    auto xn = x.node_ptr();
    return make_result<T>(x.shape(), std::move(out), {xn}, [xn, dfdx](TensorNode<T>& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(xn->data[i], self.data[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

/// x * s for a one-element tensor s (a learnable scalar).
template <class T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw DataError("scale: scalar operand has shape " + shape_str(s.shape()));
    const T k = s.item();
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
    auto xn = x.node_ptr(), sn = s.node_ptr();
    return make_result<T>(x.shape(), std::move(out), {xn, sn}, [xn, sn](TensorNode<T>& self) {
        const T k = sn->data[0];
        if (xn->requires_grad) {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
        }
        if (sn->requires_grad) {
            T acc = 0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->data[i];
            sn->ensure_grad()[0] += acc;
        }
    });
}

/// a * x + b with constants a, b.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
    return detail::unary(x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// |x|, with subgradient 0 at the kink.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::abs(v); }, [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Activations

/// GELU, exact erf form.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    return detail::unary(x, detail::gelu_value<T>, [](T v, T) { return detail::gelu_slope(v); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(x, detail::sigmoid_value<T>, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary(x, detail::softplus_value<T>, [](T v, T) { return detail::sigmoid_value(v); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    auto xn = x.node_ptr();
    return make_result<T>(Shape{1}, {acc}, {xn}, [xn](TensorNode<T>& self) {
        auto& g = xn->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return affine(sum(x), T(1) / static_cast<T>(x.numel()), T(0));
}

/// Σ w·x / Σ w with constant weights w (typically a 0/1 mask).
template <class T>
Tensor<T> weighted_mean(const Tensor<T>& x, std::span<const T> weights) {
    if (weights.size() != x.numel()) throw DataError("weighted_mean: weight count mismatch");
    T wsum = 0, acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        wsum += weights[i];
        acc += weights[i] * x[i];
    }
    if (wsum <= 0) throw DataError("weighted_mean: weights sum to zero");
    std::vector<T> w(weights.begin(), weights.end());
    auto xn = x.node_ptr();
    return make_result<T>(Shape{1}, {acc / wsum}, {xn}, [xn, w = std::move(w), wsum](TensorNode<T>& self) {
        auto& g = xn->ensure_grad();
        const T k = self.grad[0] / wsum;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * w[i];
    });
}

/// Spatial mean of an NCHW tensor -> [B,C,1,1].
template <class T>
Tensor<T> mean_hw(const Tensor<T>& x) {
    detail::require_rank(x, 4, "mean_hw");
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
        out[p] = acc / static_cast<T>(hw);
    }
    auto xn = x.node_ptr();
    return make_result<T>(Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {xn},
                          [xn, planes, hw](TensorNode<T>& self) {
                              auto& g = xn->ensure_grad();
                              for (std::size_t p = 0; p < planes; ++p) {
                                  const T k = self.grad[p] / static_cast<T>(hw);
                                  for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += k;
                              }
                          });
}

/// x[B,C,H,W] * g[B,C,1,1], broadcasting g over the spatial plane.
template <class T>
Tensor<T> mul_channels(const Tensor<T>& x, const Tensor<T>& g) {
    detail::require_rank(x, 4, "mul_channels");
    if (g.shape() != Shape{x.dim(0), x.dim(1), 1, 1}) {
        throw DataError("mul_channels: gate shape " + shape_str(g.shape()) + " for input " + shape_str(x.shape()));
    }
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(x.numel());
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = x[p * hw + i] * g[p];
    }
    auto xn = x.node_ptr(), gn = g.node_ptr();
    return make_result<T>(x.shape(), std::move(out), {xn, gn}, [xn, gn, planes, hw](TensorNode<T>& self) {
        if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += self.grad[p * hw + i] * gn->data[p];
            }
        }
        if (gn->requires_grad) {
            auto& gg = gn->ensure_grad();
            for (std::size_t p = 0; p < planes; ++p) {
                T acc = 0;
                for (std::size_t i = 0; i < hw; ++i) acc += self.grad[p * hw + i] * xn->data[p * hw + i];
                gg[p] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DataError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto xn = x.node_ptr();
    return make_result<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {xn},
                          [xn](TensorNode<T>& self) {
                              auto& g = xn->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          });
}

/// Reorders axes: output axis i is input axis perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const std::size_t rank = x.rank();
    if (perm.size() != rank) throw DataError("permute: permutation rank mismatch");
    std::vector<bool> used(rank, false);
    for (auto p : perm) {
        if (p >= rank || used[p]) throw DataError("permute: invalid permutation");
        used[p] = true;
    }
    Shape out_shape(rank);
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(perm[i]);

    // Source offset for each output element.
    const std::size_t n = x.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t o = 0; o < n; ++o) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_stride[perm[i]];
        src[o] = off;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<T> out(n);
    for (std::size_t o = 0; o < n; ++o) out[o] = x[src[o]];
    auto xn = x.node_ptr();
    return make_result<T>(std::move(out_shape), std::move(out), {xn}, [xn, src = std::move(src)](TensorNode<T>& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t o = 0; o < src.size(); ++o) g[src[o]] += self.grad[o];
    });
}

/// Concatenates NCHW tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DataError("concat_channels: no inputs");
    const auto& first = parts.front();
    detail::require_rank(first, 4, "concat_channels");
    const std::size_t batch = first.dim(0), hw = first.dim(2) * first.dim(3);
    std::size_t channels = 0;
    for (const auto& p : parts) {
        detail::require_rank(p, 4, "concat_channels");
        if (p.dim(0) != batch || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3)) {
            throw DataError("concat_channels: incompatible shape " + shape_str(p.shape()));
        }
        channels += p.dim(1);
    }
    std::vector<T> out(batch * channels * hw);
    std::vector<std::size_t> offsets;
    std::size_t c0 = 0;
    for (const auto& p : parts) {
        offsets.push_back(c0);
        const std::size_t pc = p.dim(1);
        for (std::size_t b = 0; b < batch; ++b) {
            std::copy_n(p.data().begin() + b * pc * hw, pc * hw, out.begin() + (b * channels + c0) * hw);
        }
        c0 += pc;
    }
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    auto captured = nodes;
    return make_result<T>(Shape{batch, channels, first.dim(2), first.dim(3)}, std::move(out), std::move(nodes),
                          [captured, offsets, batch, channels, hw](TensorNode<T>& self) {
                              for (std::size_t k = 0; k < captured.size(); ++k) {
                                  auto& pn = captured[k];
                                  if (!pn->requires_grad) continue;
                                  auto& g = pn->ensure_grad();
                                  const std::size_t pc = pn->shape[1];
                                  for (std::size_t b = 0; b < batch; ++b) {
                                      const T* src = self.grad.data() + (b * channels + offsets[k]) * hw;
                                      T* dst = g.data() + b * pc * hw;
                                      for (std::size_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
                                  }
                              }
                          });
}

/// Channel c of an NCHW tensor as [B,1,H,W].
template <class T>
Tensor<T> select_channel(const Tensor<T>& x, std::size_t c) {
    detail::require_rank(x, 4, "select_channel");
    if (c >= x.dim(1)) throw DataError("select_channel: channel out of range");
    const std::size_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(batch * hw);
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(x.data().begin() + (b * channels + c) * hw, hw, out.begin() + b * hw);
    }
    auto xn = x.node_ptr();
    return make_result<T>(Shape{batch, 1, x.dim(2), x.dim(3)}, std::move(out), {xn},
                          [xn, c, batch, channels, hw](TensorNode<T>& self) {
                              auto& g = xn->ensure_grad();
                              for (std::size_t b = 0; b < batch; ++b) {
                                  for (std::size_t i = 0; i < hw; ++i) g[(b * channels + c) * hw + i] += self.grad[b * hw + i];
                              }
                          });
}

// ---------------------------------------------------------------------------
// Linear maps

/// y = x Wᵀ + b for x[N,Cin], W[Cout,Cin], b[Cout] (b may be undefined).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
    detail::require_rank(x, 2, "linear");
    detail::require_rank(w, 2, "linear");
    const std::size_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
    if (w.dim(1) != cin) throw DataError("linear: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
    if (b.defined() && b.shape() != Shape{cout}) throw DataError("linear: bias shape " + shape_str(b.shape()));
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto N = static_cast<Eigen::Index>(n), I = static_cast<Eigen::Index>(cin), O = static_cast<Eigen::Index>(cout);
    std::vector<T> out(n * cout);
    Eigen::Map<Mat> y(out.data(), N, O);
    y.noalias() = Eigen::Map<const Mat>(x.data().data(), N, I) * Eigen::Map<const Mat>(w.data().data(), O, I).transpose();
    if (b.defined()) {
        for (Eigen::Index r = 0; r < N; ++r) {
            for (Eigen::Index o = 0; o < O; ++o) y(r, o) += b[static_cast<std::size_t>(o)];
        }
    }
    auto xn = x.node_ptr(), wn = w.node_ptr();
    auto bn = b.defined() ? b.node_ptr() : nullptr;
    return make_result<T>(Shape{n, cout}, std::move(out), {xn, wn, bn}, [xn, wn, bn, N, I, O](TensorNode<T>& self) {
        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const Mat> gy(self.grad.data(), N, O);
        if (xn->requires_grad) {
            Eigen::Map<Mat>(xn->ensure_grad().data(), N, I).noalias() += gy * Eigen::Map<const Mat>(wn->data.data(), O, I);
        }
        if (wn->requires_grad) {
            Eigen::Map<Mat>(wn->ensure_grad().data(), O, I).noalias() +=
                gy.transpose() * Eigen::Map<const Mat>(xn->data.data(), N, I);
        }
        if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (Eigen::Index o = 0; o < O; ++o) gb[static_cast<std::size_t>(o)] += gy.col(o).sum();
        }
    });
}

namespace detail {

// Accumulates wv * in (shifted by (dy, dx)) into out over the valid region of
// an h×w plane with zero padding.
template <class T>
inline void shifted_axpy(T* out, const T* in, T wv, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t h,
                         std::ptrdiff_t w) {
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(h, h - dy);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(w, w - dx);
    for (std::ptrdiff_t y = y0; y < y1; ++y) {
        T* o = out + y * w;
        const T* s = in + (y + dy) * w + dx;
        for (std::ptrdiff_t x = x0; x < x1; ++x) o[x] += wv * s[x];
    }
}

// Σ a(y,x) * b(y+dy, x+dx) over the valid region.
template <class T>
inline T shifted_dot(const T* a, const T* b, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t h, std::ptrdiff_t w) {
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(h, h - dy);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(w, w - dx);
    T acc = 0;
    for (std::ptrdiff_t y = y0; y < y1; ++y) {
        const T* pa = a + y * w;
        const T* pb = b + (y + dy) * w + dx;
        for (std::ptrdiff_t x = x0; x < x1; ++x) acc += pa[x] * pb[x];
    }
    return acc;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds k×k zero-padded neighbourhoods of a [cin,h,w] image into rows
// (i·k² + ky·k + kx) of a [cin·k², h·w] matrix.
template <class T>
void im2col(const T* src, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, RowMat<T>& cols) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    cols.setZero(static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(h * w));
    for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols.data() + ((i * k + ky) * k + kx) * h * w;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad, dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(H, H - dy);
                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(W, W - dx);
                for (std::ptrdiff_t y = y0; y < y1; ++y) {
                    const T* s = src + (i * h + static_cast<std::size_t>(y + dy)) * w + dx;
                    std::copy(s + x0, s + x1, row + y * W + x0);
                }
            }
        }
    }
}

// Adjoint of im2col: scatters a [cin·k², h·w] matrix back onto [cin,h,w].
template <class T>
void col2im_add(const RowMat<T>& cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, T* dst) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols.data() + ((i * k + ky) * k + kx) * h * w;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad, dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(H, H - dy);
                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(W, W - dx);
                for (std::ptrdiff_t y = y0; y < y1; ++y) {
                    T* d = dst + (i * h + static_cast<std::size_t>(y + dy)) * w + dx;
                    const T* r = row + y * W;
                    for (std::ptrdiff_t x = x0; x < x1; ++x) d[x] += r[x];
                }
            }
        }
    }
}

inline void require_odd_kernel(std::size_t k, const char* op) {
    if (k % 2 == 0) throw ConfigError(std::string(op) + ": kernel size must be odd, got " + std::to_string(k));
}

}  // namespace detail

/// Dense 2D convolution (cross-correlation) with zero "same" padding.
/// x[B,Cin,H,W], w[Cout,Cin,k,k], b[Cout] (optional). Evaluated per sample
/// as W[Cout, Cin·k²] · cols[Cin·k², H·W].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
    detail::require_rank(x, 4, "conv2d");
    detail::require_rank(w, 4, "conv2d");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || w.dim(3) != k) {
        throw DataError("conv2d: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
    }
    detail::require_odd_kernel(k, "conv2d");
    if (b.defined() && b.shape() != Shape{cout}) throw DataError("conv2d: bias shape " + shape_str(b.shape()));
    using Mat = detail::RowMat<T>;
    const auto hw = static_cast<Eigen::Index>(h * wd), ck = static_cast<Eigen::Index>(cin * k * k);
    const auto co = static_cast<Eigen::Index>(cout);

    std::vector<T> out(batch * cout * h * wd);
    Mat cols;
    Eigen::Map<const Mat> wm(w.data().data(), co, ck);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* src = x.data().data() + bi * cin * h * wd;
        Eigen::Map<Mat> dst(out.data() + bi * cout * h * wd, co, hw);
        if (k == 1) {
            dst.noalias() = wm * Eigen::Map<const Mat>(src, ck, hw);
        } else {
            detail::im2col(src, cin, h, wd, k, cols);
            dst.noalias() = wm * cols;
        }
        if (b.defined()) {
            for (Eigen::Index o = 0; o < co; ++o) dst.row(o).array() += b[static_cast<std::size_t>(o)];
        }
    }
    auto xn = x.node_ptr(), wn = w.node_ptr();
    auto bn = b.defined() ? b.node_ptr() : nullptr;
    return make_result<T>(
        Shape{batch, cout, h, wd}, std::move(out), {xn, wn, bn},
        [xn, wn, bn, batch, cin, cout, k, h, wd](TensorNode<T>& self) {
            using Mat = detail::RowMat<T>;
            const auto hw = static_cast<Eigen::Index>(h * wd), ck = static_cast<Eigen::Index>(cin * k * k);
            const auto co = static_cast<Eigen::Index>(cout);
            Eigen::Map<const Mat> wm(wn->data.data(), co, ck);
            Mat cols, gcols;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                Eigen::Map<const Mat> go(self.grad.data() + bi * cout * h * wd, co, hw);
                const T* src = xn->data.data() + bi * cin * h * wd;
                if (wn->requires_grad) {
                    Eigen::Map<Mat> gw(wn->ensure_grad().data(), co, ck);
                    if (k == 1) {
                        gw.noalias() += go * Eigen::Map<const Mat>(src, ck, hw).transpose();
                    } else {
                        detail::im2col(src, cin, h, wd, k, cols);
                        gw.noalias() += go * cols.transpose();
                    }
                }
                if (xn->requires_grad) {
                    T* gx = xn->ensure_grad().data() + bi * cin * h * wd;
                    if (k == 1) {
                        Eigen::Map<Mat>(gx, ck, hw).noalias() += wm.transpose() * go;
                    } else {
                        gcols.noalias() = wm.transpose() * go;
                        detail::col2im_add(gcols, cin, h, wd, k, gx);
                    }
                }
                if (bn && bn->requires_grad) {
                    auto& gb = bn->ensure_grad();
                    for (Eigen::Index o = 0; o < co; ++o) gb[static_cast<std::size_t>(o)] += go.row(o).sum();
                }
            }
        });
}

/// Depthwise 2D convolution with zero "same" padding: channel c of the
/// output depends only on channel c of the input. x[B,C,H,W], kernel[C,k,k].
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& b = {}) {
    detail::require_rank(x, 4, "depthwise_conv2d");
    detail::require_rank(kernel, 3, "depthwise_conv2d");
    const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3), k = kernel.dim(1);
    if (kernel.dim(0) != ch || kernel.dim(2) != k) {
        throw DataError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " for input " + shape_str(x.shape()));
    }
    detail::require_odd_kernel(k, "depthwise_conv2d");
    if (b.defined() && b.shape() != Shape{ch}) throw DataError("depthwise_conv2d: bias shape " + shape_str(b.shape()));
    const std::size_t hw = h * wd;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(wd);

    std::vector<T> out(x.numel());
    for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t c = 0; c < ch; ++c) {
            T* dst = out.data() + (bi * ch + c) * hw;
            if (b.defined()) std::fill(dst, dst + hw, b[c]);
            const T* src = x.data().data() + (bi * ch + c) * hw;
            const T* wk = kernel.data().data() + c * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    detail::shifted_axpy(dst, src, wk[ky * k + kx], static_cast<std::ptrdiff_t>(ky) - pad,
                                         static_cast<std::ptrdiff_t>(kx) - pad, H, W);
                }
            }
        }
    }
    auto xn = x.node_ptr(), kn = kernel.node_ptr();
    auto bn = b.defined() ? b.node_ptr() : nullptr;
    return make_result<T>(x.shape(), std::move(out), {xn, kn, bn}, [xn, kn, bn, batch, ch, k, hw, pad, H, W](TensorNode<T>& self) {
        const T* gy = self.grad.data();
        for (std::size_t bi = 0; bi < batch; ++bi) {
            for (std::size_t c = 0; c < ch; ++c) {
                const T* go = gy + (bi * ch + c) * hw;
                const T* wk = kn->data.data() + c * k * k;
                if (xn->requires_grad) {
                    T* dst = xn->ensure_grad().data() + (bi * ch + c) * hw;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            detail::shifted_axpy(dst, go, wk[ky * k + kx], pad - static_cast<std::ptrdiff_t>(ky),
                                                 pad - static_cast<std::ptrdiff_t>(kx), H, W);
                        }
                    }
                }
                if (kn->requires_grad) {
                    const T* src = xn->data.data() + (bi * ch + c) * hw;
                    T* gk = kn->ensure_grad().data() + c * k * k;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            gk[ky * k + kx] += detail::shifted_dot(go, src, static_cast<std::ptrdiff_t>(ky) - pad,
                                                                   static_cast<std::ptrdiff_t>(kx) - pad, H, W);
                        }
                    }
                }
                if (bn && bn->requires_grad) {
                    T acc = 0;
                    for (std::size_t i = 0; i < hw; ++i) acc += go[i];
                    bn->ensure_grad()[c] += acc;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalisation

inline constexpr double kNormEpsilon = 1e-5;

namespace detail {

// Normalises `blocks` independent vectors of x, then applies a per-channel
// affine map. Block b = (o, i) with o = b / inner, i = b % inner holds the
// group_len elements at o*stride_outer + e*inner + i.
template <class T, class ChannelOf>
Tensor<T> normalize_blocks(const Tensor<T>& x, std::size_t blocks, std::size_t stride_outer, std::size_t group_len,
                           std::size_t inner, const Tensor<T>& gamma, const Tensor<T>& beta, ChannelOf channel_of,
                           T eps) {
    const std::size_t n = x.numel();
    std::vector<T> xhat(n), out(n);
    std::vector<T> inv_std(blocks);
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t o = blk / inner, i = blk % inner;
        const std::size_t base = o * stride_outer + i;
        T mu = 0;
        for (std::size_t e = 0; e < group_len; ++e) mu += x[base + e * inner];
        mu /= static_cast<T>(group_len);
        T var = 0;
        for (std::size_t e = 0; e < group_len; ++e) {
            const T d = x[base + e * inner] - mu;
            var += d * d;
        }
        var /= static_cast<T>(group_len);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[blk] = is;
        for (std::size_t e = 0; e < group_len; ++e) {
            const std::size_t idx = base + e * inner;
            xhat[idx] = (x[idx] - mu) * is;
            const std::size_t c = channel_of(idx);
            out[idx] = xhat[idx] * gamma[c] + beta[c];
        }
    }
    auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
    return make_result<T>(
        x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), blocks, stride_outer, group_len, inner,
         channel_of](TensorNode<T>& self) {
            const T* gy = self.grad.data();
            if (gn->requires_grad || bn->requires_grad) {
                auto& gg = gn->ensure_grad();
                auto& gb = bn->ensure_grad();
                for (std::size_t idx = 0; idx < xhat.size(); ++idx) {
                    const std::size_t c = channel_of(idx);
                    gg[c] += gy[idx] * xhat[idx];
                    gb[c] += gy[idx];
                }
            }
            if (!xn->requires_grad) return;
            auto& gx = xn->ensure_grad();
            const T m = static_cast<T>(group_len);
            for (std::size_t blk = 0; blk < blocks; ++blk) {
                const std::size_t o = blk / inner, i = blk % inner;
                const std::size_t base = o * stride_outer + i;
                T s1 = 0, s2 = 0;
                for (std::size_t e = 0; e < group_len; ++e) {
                    const std::size_t idx = base + e * inner;
                    const T gh = gy[idx] * gn->data[channel_of(idx)];
                    s1 += gh;
                    s2 += gh * xhat[idx];
                }
                for (std::size_t e = 0; e < group_len; ++e) {
                    const std::size_t idx = base + e * inner;
                    const T gh = gy[idx] * gn->data[channel_of(idx)];
                    gx[idx] += inv_std[blk] * (gh - s1 / m - xhat[idx] * s2 / m);
                }
            }
        });
}

}  // namespace detail

/// Group normalisation of x[B,C,H,W] over `groups` contiguous channel blocks,
/// followed by a per-channel affine (scale, shift), each of shape [C].
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& scale_c, const Tensor<T>& shift_c,
                     T eps = T(kNormEpsilon)) {
    detail::require_rank(x, 4, "group_norm");
    const std::size_t batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (groups == 0 || ch % groups != 0) {
        throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(ch) +
                          " channels");
    }
    if (scale_c.shape() != Shape{ch} || shift_c.shape() != Shape{ch}) throw DataError("group_norm: affine shape mismatch");
    const std::size_t group_len = (ch / groups) * hw;
    // Each (sample, group) block is contiguous: outer = B*G blocks, inner = 1.
    auto channel_of = [ch, hw](std::size_t idx) { return (idx / hw) % ch; };
    return detail::normalize_blocks(x, batch * groups, group_len, group_len, std::size_t{1}, scale_c, shift_c, channel_of,
                                    eps);
}

/// Layer normalisation over `axis` (all other axes index independent
/// vectors), with per-feature affine of shape [dim(axis)].
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& scale_c, const Tensor<T>& shift_c,
                     T eps = T(kNormEpsilon)) {
    if (axis >= x.rank()) throw DataError("layer_norm: axis out of range");
    const std::size_t len = x.dim(axis);
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t outer = x.numel() / (len * inner);
    if (scale_c.shape() != Shape{len} || shift_c.shape() != Shape{len}) throw DataError("layer_norm: affine shape mismatch");
    auto channel_of = [len, inner](std::size_t idx) { return (idx / inner) % len; };
    return detail::normalize_blocks(x, outer * inner, len * inner, len, inner, scale_c, shift_c, channel_of, eps);
}

}  // namespace mrf::ops
