#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "symunet/tensor.hpp"

namespace symunet {

// SYMT tensor file: magic "SYMT", u32 LE rank, rank x u32 LE dims,
// float32 LE data row-major. The on-disk payload is always float32.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("unexpected end of SYMT stream");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename T>
void save_symt(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write("SYMT", 4);
    detail::write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (T x : t.data()) {
        float f = static_cast<float>(x);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!os) throw FormatError("short write to '" + path + "'");
}

template <typename T = float>
Tensor<T> load_symt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SYMT", 4) != 0)
        throw FormatError("'" + path + "' is not a SYMT tensor file");
    const std::uint32_t rank = detail::read_u32(is);
    if (rank > 8) throw FormatError("'" + path + "': implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
    const std::int64_t n = numel(shape);
    std::vector<T> values(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        float f;
        is.read(reinterpret_cast<char*>(&f), 4);
        if (!is) throw FormatError("'" + path + "': truncated data section");
        values[static_cast<size_t>(i)] = static_cast<T>(f);
    }
    return Tensor<T>::from_data(std::move(shape), std::move(values));
}

}  // namespace symunet
