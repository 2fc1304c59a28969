#pragma once

// SGT1 tensor container:
//   "SGT1" | u8 dtype (0 = f64) | u8 ndim | ndim x u32 LE extents | row-major LE payload

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "signdiff/error.hpp"
#include "signdiff/tensor.hpp"

namespace signdiff {

inline constexpr std::array<char, 4> kSgtMagic{'S', 'G', 'T', '1'};
inline constexpr std::uint8_t kSgtDtypeF64 = 0;

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_sgt(const Tensor& t) {
    require(t.rank() <= 255, "SGT1 supports at most 255 dimensions");
    std::vector<std::uint8_t> out;
    out.reserve(6 + 4 * t.rank() + 8 * t.size());
    out.insert(out.end(), kSgtMagic.begin(), kSgtMagic.end());
    out.push_back(kSgtDtypeF64);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) {
        require(e <= 0xffffffffu, "SGT1 extent exceeds u32");
        detail::put_le(out, e, 4);
    }
    for (double v : t.data()) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    return out;
}

inline Tensor decode_sgt(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kSgtMagic.data(), 4) != 0)
        throw IoError("not an SGT1 container (bad magic)");
    if (bytes[4] != kSgtDtypeF64) throw IoError("unsupported SGT1 dtype code " + std::to_string(bytes[4]));
    const std::size_t ndim = bytes[5];
    if (bytes.size() < 6 + 4 * ndim) throw IoError("truncated SGT1 header");
    Shape shape(ndim);
    for (std::size_t i = 0; i < ndim; ++i) {
        shape[i] = static_cast<std::size_t>(detail::get_le(bytes.data() + 6 + 4 * i, 4));
        if (shape[i] == 0) throw IoError("SGT1 extent of zero");
    }
    const std::size_t count = shape_size(shape);
    const std::size_t offset = 6 + 4 * ndim;
    if (bytes.size() != offset + 8 * count)
        throw IoError("SGT1 payload length mismatch: expected " + std::to_string(8 * count) + " bytes");
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<double>(detail::get_le(bytes.data() + offset + 8 * i, 8));
    return Tensor(std::move(shape), std::move(data));
}

inline void save_sgt(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = encode_sgt(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

inline Tensor load_sgt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return decode_sgt(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace signdiff
