#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "layerfusion/io/tensor_file.hpp"
#include "layerfusion/toy/rng.hpp"

namespace layerfusion::io {

inline std::uint64_t checksum_bytes(const std::vector<unsigned char>& bytes,
                                    std::uint64_t seed = 0xCBF29CE484222325ull) {
    return toy::fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                        seed);
}

inline std::uint64_t checksum_file(const std::filesystem::path& path) {
    return checksum_bytes(detail::read_file(path));
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace layerfusion::io
