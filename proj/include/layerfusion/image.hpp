#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "layerfusion/errors.hpp"

namespace layerfusion {

enum class AlphaMode { Straight, Premultiplied };

/// Interleaved float image with 1 (gray), 3 (RGB) or 4 (RGBA) channels.
/// Channel values are nominally in [0,1]. RGBA images are straight-alpha
/// unless marked otherwise.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<float> data;
    AlphaMode alpha_mode = AlphaMode::Straight;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(w * h * c, fill) {
        if (c != 1 && c != 3 && c != 4)
            throw ArgumentError("image channel count must be 1, 3 or 4, got " +
                                std::to_string(c));
    }

    std::size_t pixel_count() const noexcept { return width * height; }

    float& at(std::size_t x, std::size_t y, std::size_t c) noexcept {
        return data[(y * width + x) * channels + c];
    }
    float at(std::size_t x, std::size_t y, std::size_t c) const noexcept {
        return data[(y * width + x) * channels + c];
    }

    bool has_alpha() const noexcept { return channels == 4; }

    friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace layerfusion
