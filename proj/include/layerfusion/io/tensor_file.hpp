// ATND tensor dump format, version 1. All integers little-endian.
//
//   offset  size       field
//   0       4          magic "ATND"
//   4       4          format_version (u32) = 1
//   8       1          dtype (u8), 1 = float32
//   9       1          ndim (u8)
//   10      4 * ndim   dims (u32 each)
//   ...     4 * prod   payload, row-major IEEE-754 float32
//
// A rank-0 tensor has ndim = 0 and a single payload element. Trailing bytes
// after the payload are rejected.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "layerfusion/errors.hpp"
#include "layerfusion/tensor.hpp"

namespace layerfusion::io {

inline constexpr char kTensorMagic[4] = {'A', 'T', 'N', 'D'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'", 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
    if (t.rank() > 255) throw ArgumentError("ATND supports at most 255 dimensions");
    std::vector<unsigned char> out(kTensorMagic, kTensorMagic + 4);
    detail::put_u32(out, kTensorFormatVersion);
    out.push_back(kDtypeFloat32);
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (std::size_t d : t.dims()) {
        if (d > 0xFFFFFFFFull) throw ArgumentError("ATND dimension exceeds u32");
        detail::put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.reserve(out.size() + 4 * t.size());
    for (float v : t.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Tensor decode_tensor(const std::vector<unsigned char>& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (bytes.size() - pos < n)
            throw FormatError(std::string("truncated ") + what + ": expected " + std::to_string(n) +
                                  " bytes, got " + std::to_string(bytes.size() - pos),
                              pos);
    };
    need(4, "magic");
    if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0) throw FormatError("bad magic, not an ATND file", 0);
    pos = 4;
    need(4, "header");
    const std::uint32_t version = detail::get_u32(bytes.data() + pos);
    if (version != kTensorFormatVersion)
        throw FormatError("unsupported ATND version " + std::to_string(version), pos);
    pos += 4;
    need(2, "header");
    const std::uint8_t dtype = bytes[pos];
    if (dtype != kDtypeFloat32) throw FormatError("unsupported dtype code " + std::to_string(dtype), pos);
    const std::size_t ndim = bytes[pos + 1];
    pos += 2;
    need(4 * ndim, "dims");
    std::vector<std::size_t> dims(ndim);
    std::size_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        dims[i] = detail::get_u32(bytes.data() + pos + 4 * i);
        if (dims[i] == 0) throw FormatError("zero-sized dimension", pos + 4 * i);
        count *= dims[i];
    }
    pos += 4 * ndim;
    const std::size_t payload = 4 * count;
    if (bytes.size() - pos != payload)
        throw FormatError("payload length mismatch: expected " + std::to_string(payload) +
                              " bytes, got " + std::to_string(bytes.size() - pos),
                          pos);
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + pos + 4 * i));
    return Tensor(std::move(dims), std::move(data));
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    detail::write_file(path, encode_tensor(t));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    try {
        return decode_tensor(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

}  // namespace layerfusion::io
