// SplitMix64 and the float draws derived from it.
//
// Byte-level contract (platform independent):
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
// uniform01()  = (next() >> 40) * 2^-24            (24 random bits, [0,1))
// uniform(a,b) = a + (b - a) * uniform01()         (float arithmetic)
// normal()     = Box-Muller on two uniform01 draws, u1 mapped to (0,1] as
//                1 - u1; only the cosine branch is used (one draw per call).

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace layerfusion::toy {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    float uniform01() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }

    float normal() {
        const double u1 = 1.0 - static_cast<double>(uniform01());
        const double u2 = static_cast<double>(uniform01());
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(2.0 * std::numbers::pi * u2));
    }

private:
    std::uint64_t state_;
};

/// FNV-1a over bytes; used for prompt-word seeds and file checksums.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t hash = 0xCBF29CE484222325ull) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001B3ull;
    }
    return hash;
}

}  // namespace layerfusion::toy
