#pragma once

#include <cstddef>
#include <vector>

#include "mrf/core/error.hpp"

namespace mrf {

/// Row-major 2D array.
template <class T>
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), values(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::size_t size() const { return values.size(); }
    bool same_shape(const auto& other) const { return rows == other.rows && cols == other.cols; }
};

}  // namespace mrf
