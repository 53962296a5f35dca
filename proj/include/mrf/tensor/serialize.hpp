#pragma once

// Little-endian tensor files:
//   "MRFT" | u32 dtype | u32 rank | u64 extents[rank] | raw data
// and named tables of such records:
//   "MRFP" | u32 count | { u32 name_len | name | tensor record }*

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "mrf/tensor/tensor.hpp"

namespace mrf::io {

static_assert(std::endian::native == std::endian::little, "tensor files are written in native little-endian order");

enum class DType : std::uint32_t { kFloat32 = 1, kFloat64 = 2, kUInt8 = 3 };

template <class T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) return DType::kFloat32;
    else if constexpr (std::is_same_v<T, double>) return DType::kFloat64;
    else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::kUInt8;
    else static_assert(sizeof(T) == 0, "unsupported tensor element type");
}

inline std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::kFloat32: return 4;
        case DType::kFloat64: return 8;
        case DType::kUInt8: return 1;
    }
    throw DataError("unknown dtype code");
}

namespace detail {
template <class U>
void put(std::ostream& os, U v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}
template <class U>
U get(std::istream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw DataError("tensor file truncated");
    return v;
}
}  // namespace detail

/// A decoded record: shape plus values converted to the requested type.
template <class T>
struct RawTensor {
    Shape shape;
    std::vector<T> values;
};

template <class T>
void write_tensor(std::ostream& os, const Shape& shape, std::span<const T> values) {
    if (shape_numel(shape) != values.size()) throw DataError("write_tensor: shape/value count mismatch");
    os.write("MRFT", 4);
    detail::put(os, static_cast<std::uint32_t>(dtype_of<T>()));
    detail::put(os, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) detail::put(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <class T>
RawTensor<T> read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MRFT", 4) != 0) throw DataError("not a tensor record (bad magic)");
    const auto dtype = static_cast<DType>(detail::get<std::uint32_t>(is));
    const auto rank = detail::get<std::uint32_t>(is);
    if (rank > 16) throw DataError("tensor record rank too large");
    RawTensor<T> out;
    for (std::uint32_t i = 0; i < rank; ++i) out.shape.push_back(static_cast<std::size_t>(detail::get<std::uint64_t>(is)));
    const std::size_t n = shape_numel(out.shape);
    std::vector<char> bytes(n * dtype_size(dtype));
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!is) throw DataError("tensor file truncated");
    out.values.resize(n);
    auto convert = [&]<class S>(S*) {
        for (std::size_t i = 0; i < n; ++i) {
            S v;
            std::memcpy(&v, bytes.data() + i * sizeof(S), sizeof(S));
            out.values[i] = static_cast<T>(v);
        }
    };
    switch (dtype) {
        case DType::kFloat32: convert(static_cast<float*>(nullptr)); break;
        case DType::kFloat64: convert(static_cast<double*>(nullptr)); break;
        case DType::kUInt8: convert(static_cast<std::uint8_t*>(nullptr)); break;
        default: throw DataError("unknown dtype code in tensor record");
    }
    return out;
}

template <class T>
void save_tensor(const std::string& path, const Shape& shape, std::span<const T> values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    write_tensor(os, shape, values);
    if (!os) throw DataError("write failed: " + path);
}

template <class T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    save_tensor<T>(path, t.shape(), t.data());
}

template <class T>
RawTensor<T> load_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    return read_tensor<T>(is);
}

template <class T>
Tensor<T> load_tensor(const std::string& path) {
    auto raw = load_raw<T>(path);
    return Tensor<T>(std::move(raw.shape), std::move(raw.values));
}

/// Writes a named table; entries keep their insertion order.
template <class T>
void save_table(const std::string& path, const std::vector<std::pair<std::string, Tensor<T>>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os.write("MRFP", 4);
    detail::put(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        detail::put(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor<T>(os, t.shape(), t.data());
    }
    if (!os) throw DataError("write failed: " + path);
}

template <class T>
std::vector<std::pair<std::string, RawTensor<T>>> load_table(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MRFP", 4) != 0) throw DataError("not a parameter table: " + path);
    const auto count = detail::get<std::uint32_t>(is);
    std::vector<std::pair<std::string, RawTensor<T>>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::get<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw DataError("parameter table truncated: " + path);
        out.emplace_back(std::move(name), read_tensor<T>(is));
    }
    return out;
}

}  // namespace mrf::io
