#pragma once

// Parameter initialisers.

#include <cmath>
#include <random>
#include <vector>

#include "mrf/tensor/tensor.hpp"

namespace mrf::init {

/// Uniform in ±1/√fan_in.
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(std::move(shape), std::move(v));
}

/// Conv weight [cout, cin, k, k] with fan_in = cin·k².
template <class T>
Tensor<T> conv_weight(std::size_t cout, std::size_t cin, std::size_t k, std::mt19937_64& rng) {
    return fan_in_uniform<T>(Shape{cout, cin, k, k}, cin * k * k, rng);
}

}  // namespace mrf::init
