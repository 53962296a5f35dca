#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "mrf/tensor/tensor.hpp"

namespace mrf {

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Each leaf in `leaves` is perturbed in place and restored.
///
/// Returns max over checked coordinates of
///   |analytic - numeric| / max(1, |numeric|),
/// or +inf if any evaluation is non-finite. When `max_coords_per_leaf` is
/// nonzero, a seeded random subset of coordinates is checked per leaf.
template <class T>
T grad_check_leaves(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> leaves, T eps,
                    std::size_t max_coords_per_leaf = 0, std::uint64_t seed = 0) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    const Tensor<T> y = f();
    if (y.numel() != 1) throw DataError("grad_check: function must return a scalar");
    if (!std::isfinite(y.item())) return std::numeric_limits<T>::infinity();
    y.backward();

    std::mt19937_64 rng(seed);
    T worst = 0;
    for (auto& leaf : leaves) {
        const std::vector<T> analytic(leaf.grad().begin(), leaf.grad().end());
        std::vector<std::size_t> coords(leaf.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (max_coords_per_leaf != 0 && coords.size() > max_coords_per_leaf) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(max_coords_per_leaf);
        }
        auto values = leaf.mutable_data();
        for (std::size_t i : coords) {
            const T saved = values[i];
            T fp, fm;
            {
                NoGradGuard guard;
                values[i] = saved + eps;
                fp = f().item();
                values[i] = saved - eps;
                fm = f().item();
            }
            values[i] = saved;
            const T numeric = (fp - fm) / (T(2) * eps);
            if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) return std::numeric_limits<T>::infinity();
            worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(T(1), std::abs(numeric)));
        }
    }
    return worst;
}

/// Single-input form: checks d f(x) / dx.
template <class T>
T grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
    Tensor<T> leaf = x.detach();
    return grad_check_leaves<T>([&] { return f(leaf); }, {leaf}, eps);
}

}  // namespace mrf
