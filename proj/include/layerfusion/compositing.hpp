// Alpha compositing and spatial editing of generated layers. Straight alpha
// is the in-memory form; premultiplied images only appear at explicit
// conversions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "layerfusion/errors.hpp"
#include "layerfusion/image.hpp"

namespace layerfusion {

/// Below this alpha, unpremultiply returns rgb = 0.
inline constexpr float kUnpremultiplyEpsilon = 1e-4f;

struct SpatialEdit {
    float dx = 0.0f;
    float dy = 0.0f;
    float scale = 1.0f;
    float anchor_x = 0.0f;
    float anchor_y = 0.0f;

    void validate() const {
        if (!(scale > 0.0f) || !std::isfinite(scale))
            throw ArgumentError("edit scale must be > 0, got " + std::to_string(scale));
        if (!std::isfinite(dx) || !std::isfinite(dy) || !std::isfinite(anchor_x) ||
            !std::isfinite(anchor_y))
            throw ArgumentError("edit offsets must be finite");
    }
};

inline void require_rgba(const Image& img, const char* what) {
    if (img.channels != 4) throw ArgumentError(std::string(what) + " must be RGBA");
}

/// out = fg.rgb * a + bg * (1 - a), per pixel.
inline Image alpha_blend(const Image& fg, const Image& bg) {
    require_rgba(fg, "alpha_blend foreground");
    if (fg.alpha_mode != AlphaMode::Straight)
        throw ArgumentError("alpha_blend expects a straight-alpha foreground");
    if (bg.channels != 3) throw ArgumentError("alpha_blend background must be RGB");
    if (fg.width != bg.width || fg.height != bg.height)
        throw ArgumentError("alpha_blend size mismatch");
    Image out(bg.width, bg.height, 3);
    for (std::size_t p = 0; p < bg.pixel_count(); ++p) {
        const float a = fg.data[p * 4 + 3];
        const float keep = 1.0f - a;
        for (std::size_t k = 0; k < 3; ++k) {
            const float f = fg.data[p * 4 + k], b = bg.data[p * 3 + k];
            out.data[p * 3 + k] = std::clamp(f * a + b * keep, std::min(f, b), std::max(f, b));
        }
    }
    return out;
}

inline Image premultiply(const Image& fg) {
    require_rgba(fg, "premultiply input");
    if (fg.alpha_mode != AlphaMode::Straight) throw ArgumentError("image is already premultiplied");
    Image out = fg;
    for (std::size_t p = 0; p < fg.pixel_count(); ++p) {
        const float a = fg.data[p * 4 + 3];
        for (std::size_t k = 0; k < 3; ++k) out.data[p * 4 + k] = fg.data[p * 4 + k] * a;
    }
    out.alpha_mode = AlphaMode::Premultiplied;
    return out;
}

/// Inverse of premultiply; pixels with alpha below kUnpremultiplyEpsilon get
/// rgb = 0.
inline Image unpremultiply(const Image& fg) {
    require_rgba(fg, "unpremultiply input");
    if (fg.alpha_mode != AlphaMode::Premultiplied) throw ArgumentError("image is not premultiplied");
    Image out = fg;
    for (std::size_t p = 0; p < fg.pixel_count(); ++p) {
        const float a = fg.data[p * 4 + 3];
        for (std::size_t k = 0; k < 3; ++k)
            out.data[p * 4 + k] = a < kUnpremultiplyEpsilon
                                      ? 0.0f
                                      : std::clamp(fg.data[p * 4 + k] / a, 0.0f, 1.0f);
    }
    out.alpha_mode = AlphaMode::Straight;
    return out;
}

/// Resamples `fg` onto a canvas under `edit`: the source point for canvas
/// pixel center p is anchor + (p - anchor - translate) / scale. Sampling is
/// bilinear over pixel centers with alpha weighting (colors average in
/// premultiplied space); samples that fall outside the source are
/// transparent. A sample that lands exactly on one source pixel copies it.
inline Image apply_edit(const Image& fg, const SpatialEdit& edit, std::size_t canvas_width,
                        std::size_t canvas_height) {
    require_rgba(fg, "apply_edit input");
    edit.validate();
    Image out(canvas_width, canvas_height, 4);
    const double inv = 1.0 / static_cast<double>(edit.scale);
    const auto w = static_cast<long long>(fg.width), h = static_cast<long long>(fg.height);

    for (std::size_t y = 0; y < canvas_height; ++y)
        for (std::size_t x = 0; x < canvas_width; ++x) {
            const double cx = static_cast<double>(x) + 0.5, cy = static_cast<double>(y) + 0.5;
            const double sx = edit.anchor_x + (cx - edit.anchor_x - edit.dx) * inv - 0.5;
            const double sy = edit.anchor_y + (cy - edit.anchor_y - edit.dy) * inv - 0.5;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double tx = sx - fx0, ty = sy - fy0;
            const auto x0 = static_cast<long long>(fx0), y0 = static_cast<long long>(fy0);

            struct Tap {
                long long x, y;
                double w;
            };
            const Tap taps[4] = {{x0, y0, (1 - tx) * (1 - ty)},
                                 {x0 + 1, y0, tx * (1 - ty)},
                                 {x0, y0 + 1, (1 - tx) * ty},
                                 {x0 + 1, y0 + 1, tx * ty}};

            float* o = &out.data[(y * canvas_width + x) * 4];
            if (tx == 0.0 && ty == 0.0) {
                if (x0 >= 0 && y0 >= 0 && x0 < w && y0 < h)
                    std::copy_n(&fg.data[(static_cast<std::size_t>(y0) * fg.width +
                                          static_cast<std::size_t>(x0)) * 4],
                                4, o);
                continue;
            }
            double alpha = 0.0, rgb[3] = {0.0, 0.0, 0.0};
            for (const Tap& t : taps) {
                if (t.w == 0.0 || t.x < 0 || t.y < 0 || t.x >= w || t.y >= h) continue;
                const float* s = &fg.data[(static_cast<std::size_t>(t.y) * fg.width +
                                           static_cast<std::size_t>(t.x)) * 4];
                const double wa = t.w * s[3];
                alpha += wa;
                for (int k = 0; k < 3; ++k) rgb[k] += wa * s[k];
            }
            o[3] = static_cast<float>(std::clamp(alpha, 0.0, 1.0));
            for (int k = 0; k < 3; ++k)
                o[k] = alpha > 0.0 ? static_cast<float>(std::clamp(rgb[k] / alpha, 0.0, 1.0)) : 0.0f;
        }
    return out;
}

}  // namespace layerfusion
