// Attention-level blending across the foreground (FG), blended and
// background (BG) streams.
//
//   soft  = norm(s * c)
//   hard  = sigmoid(d * (soft - 0.5))
//   a'_blended = a_fg * soft + a_blended * (1 - soft)
//   a'_fg      = a'_blended * hard + a_fg * (1 - hard)
//
// The BG and blended streams additionally share attention: in self-attention
// each attends over the union of both streams' tokens, in cross-attention
// both attend to the background prompt.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "layerfusion/attention.hpp"
#include "layerfusion/priors.hpp"

namespace layerfusion {

struct BlendConfig {
    float d = 10.0f;
    bool blend_cross_attention = true;
    bool blend_self_attention = false;
    bool share_attention = true;
    /// Replaces the computed soft mask with a constant (ablations and
    /// limit checks only).
    std::optional<float> soft_override;
    /// Transformer blocks that blend; empty means all.
    std::vector<std::size_t> blend_blocks;

    void validate() const {
        if (!(d > 0.0f) || !std::isfinite(d))
            throw ConfigError("boundary coefficient d must be > 0, got " + std::to_string(d));
        if (soft_override && !(*soft_override >= 0.0f && *soft_override <= 1.0f))
            throw ConfigError("soft mask override must lie in [0,1]");
    }

    bool blends_block(std::size_t block) const {
        return blend_blocks.empty() ||
               std::find(blend_blocks.begin(), blend_blocks.end(), block) != blend_blocks.end();
    }

    bool all_disabled() const {
        return !blend_cross_attention && !blend_self_attention && !share_attention;
    }
};

struct BlendMasks {
    Tensor soft;  // [M], in [0,1]
    Tensor hard;  // [M], sigmoid(d * (soft - 0.5))
    float d = 10.0f;
    Shape2 spatial_shape;
};

inline Tensor hard_mask(const Tensor& soft, float d) {
    Tensor hard(soft.dims());
    for (std::size_t i = 0; i < soft.size(); ++i) hard[i] = sigmoid(d * (soft[i] - 0.5f));
    return hard;
}

/// Mean |hard - step(soft - 0.5)|; the step is 0.5 exactly at soft == 0.5.
inline double binarization_error(const BlendMasks& m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m.soft.size(); ++i) {
        const float s = m.soft[i];
        const double target = s > 0.5f ? 1.0 : (s < 0.5f ? 0.0 : 0.5);
        sum += std::abs(static_cast<double>(m.hard[i]) - target);
    }
    return sum / static_cast<double>(m.soft.size());
}

/// Builds soft/hard masks on the content prior's grid; the structure prior
/// is bilinearly resized onto it when resolutions differ.
inline BlendMasks make_masks(const StructurePrior& s, const ContentPrior& c,
                             const BlendConfig& cfg) {
    cfg.validate();
    const Shape2 shape = c.spatial_shape;
    if (c.values.size() != shape.area())
        throw ArgumentError("content prior length " + std::to_string(c.values.size()) +
                            " does not match grid " + to_string(shape));
    Tensor sv = s.spatial_shape == shape
                    ? s.values
                    : resize_token_field(s.values, s.spatial_shape, shape);
    if (sv.size() != c.values.size()) throw ArgumentError("prior lengths differ after resize");

    Tensor soft;
    if (cfg.soft_override) {
        soft = Tensor::filled({shape.area()}, *cfg.soft_override);
    } else {
        Tensor product({shape.area()});
        for (std::size_t i = 0; i < product.size(); ++i) product[i] = sv[i] * c.values[i];
        soft = minmax_normalize(product);
    }
    Tensor hard = hard_mask(soft, cfg.d);
    return {std::move(soft), std::move(hard), cfg.d, shape};
}

namespace detail {

// out = a * m + b * (1 - m) per token, kept inside [min(a,b), max(a,b)].
inline Tensor token_mix(const Tensor& a, const Tensor& b, const Tensor& mask, const char* what) {
    require_rank(a, 2, what);
    if (a.dims() != b.dims())
        throw ArgumentError(std::string(what) + ": operand shapes differ " +
                            shape_string(a.dims()) + " vs " + shape_string(b.dims()));
    if (mask.size() != a.dim(0))
        throw ArgumentError(std::string(what) + ": mask length " + std::to_string(mask.size()) +
                            " != token count " + std::to_string(a.dim(0)));
    Tensor out(a.dims());
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        const float m = mask[i];
        const float keep = 1.0f - m;
        for (std::size_t j = 0; j < a.dim(1); ++j) {
            const float x = a.at(i, j), y = b.at(i, j);
            const float v = x * m + y * keep;
            // rounding can push the sum one ulp outside the hull
            out.at(i, j) = std::clamp(v, std::min(x, y), std::max(x, y));
        }
    }
    return out;
}

}  // namespace detail

/// a'_blended = a_fg * soft + a_blended * (1 - soft)
inline Tensor blend_blended(const Tensor& a_fg, const Tensor& a_blended, const BlendMasks& masks) {
    return detail::token_mix(a_fg, a_blended, masks.soft, "blend_blended");
}

/// a'_fg = a'_blended * hard + a_fg * (1 - hard)
inline Tensor blend_foreground(const Tensor& a_blended_new, const Tensor& a_fg,
                               const BlendMasks& masks) {
    return detail::token_mix(a_blended_new, a_fg, masks.hard, "blend_foreground");
}

struct StreamPair {
    Tensor bg;
    Tensor blended;
};

/// Self-attention with shared keys/values. With `share` each stream's
/// queries attend over [h_bg; h_blended]; without it each stream attends to
/// itself only.
inline StreamPair shared_self_attention(const AttentionWeights& w, const Tensor& h_bg,
                                        const Tensor& h_blended, bool share) {
    if (h_bg.dims() != h_blended.dims())
        throw ArgumentError("shared attention needs equal resolutions, got " +
                            shape_string(h_bg.dims()) + " and " +
                            shape_string(h_blended.dims()));
    if (!share) return {attend(w, h_bg, h_bg).out, attend(w, h_blended, h_blended).out};
    const Tensor joint = concat_rows(h_bg, h_blended);
    return {attend(w, h_bg, joint).out, attend(w, h_blended, joint).out};
}

/// Cross-attention of both streams against the background conditioning.
inline StreamPair shared_cross_attention(const AttentionWeights& w, const Tensor& h_bg,
                                         const Tensor& h_blended, const Conditioning& cond_bg) {
    if (h_bg.dims() != h_blended.dims())
        throw ArgumentError("shared attention needs equal resolutions, got " +
                            shape_string(h_bg.dims()) + " and " +
                            shape_string(h_blended.dims()));
    return {attend(w, h_bg, cond_bg.tokens).out, attend(w, h_blended, cond_bg.tokens).out};
}

/// One attention sub-layer of a model: its pre-norm and its projections.
struct AttentionLayerView {
    const LayerNormParams& norm;
    const AttentionWeights& attn;
};

/// Pre-norm hidden states of the three streams at one layer.
struct StreamHidden {
    const Tensor& fg;
    const Tensor& blended;
    const Tensor& bg;
};

struct BlendStepResult {
    Tensor fg;       // a'_fg
    Tensor blended;  // a'_blended
    Tensor bg;       // a_bg
    std::optional<BlendMasks> masks;
    std::optional<ContentPrior> content;
    std::optional<AttnProbMap> fg_cross_probs;
};

namespace detail {

template <class Fn>
auto with_layer_context(const std::string& layer, Fn&& fn) {
    try {
        return fn();
    } catch (const ArgumentError& e) {
        throw ArgumentError(layer + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(layer + ": " + e.what());
    }
}

}  // namespace detail

/// Cross-attention blending step. The content prior is read from the FG
/// model's cross-attention on the FG stream before any blending at this
/// layer; masks are always produced, mask blending is applied only when
/// `cfg.blend_cross_attention` is set.
inline BlendStepResult cross_attention_blend_step(AttentionLayerView fg_model,
                                                  AttentionLayerView rgb_model,
                                                  StreamHidden hidden, const Conditioning& cond_fg,
                                                  const Conditioning& cond_bg,
                                                  const StructurePrior& s, const BlendConfig& cfg,
                                                  const std::string& layer, Shape2 layer_shape) {
    return detail::with_layer_context(layer, [&] {
        const Tensor n_fg = layer_norm(hidden.fg, fg_model.norm);
        const Tensor n_blended = layer_norm(hidden.blended, rgb_model.norm);
        const Tensor n_bg = layer_norm(hidden.bg, rgb_model.norm);

        AttentionResult fg_out = attend(fg_model.attn, n_fg, cond_fg.tokens);
        ContentPrior c = content_prior(fg_out.probs, cond_fg.eos_index, layer_shape, layer);
        BlendMasks masks = make_masks(s, c, cfg);

        StreamPair pair = shared_cross_attention(rgb_model.attn, n_bg, n_blended, cond_bg);

        BlendStepResult r;
        if (cfg.blend_cross_attention) {
            r.blended = blend_blended(fg_out.out, pair.blended, masks);
            r.fg = blend_foreground(r.blended, fg_out.out, masks);
        } else {
            r.blended = std::move(pair.blended);
            r.fg = std::move(fg_out.out);
        }
        r.bg = std::move(pair.bg);
        r.masks = std::move(masks);
        r.content = std::move(c);
        r.fg_cross_probs = std::move(fg_out.probs);
        return r;
    });
}

/// Self-attention step: attention sharing between BG and blended streams,
/// plus optional mask blending driven by the structure prior alone.
inline BlendStepResult self_attention_blend_step(AttentionLayerView fg_model,
                                                 AttentionLayerView rgb_model, StreamHidden hidden,
                                                 const StructurePrior& s, const BlendConfig& cfg,
                                                 const std::string& layer, Shape2 layer_shape) {
    return detail::with_layer_context(layer, [&] {
        const Tensor n_fg = layer_norm(hidden.fg, fg_model.norm);
        const Tensor n_blended = layer_norm(hidden.blended, rgb_model.norm);
        const Tensor n_bg = layer_norm(hidden.bg, rgb_model.norm);

        Tensor a_fg = attend(fg_model.attn, n_fg, n_fg).out;
        StreamPair pair = shared_self_attention(rgb_model.attn, n_bg, n_blended, cfg.share_attention);

        BlendStepResult r;
        if (cfg.blend_self_attention) {
            ContentPrior ones{Tensor::filled({layer_shape.area()}, 1.0f), layer_shape, 0, layer};
            BlendMasks masks = make_masks(s, ones, cfg);
            r.blended = blend_blended(a_fg, pair.blended, masks);
            r.fg = blend_foreground(r.blended, a_fg, masks);
            r.masks = std::move(masks);
        } else {
            r.blended = std::move(pair.blended);
            r.fg = std::move(a_fg);
        }
        r.bg = std::move(pair.bg);
        return r;
    });
}

}  // namespace layerfusion
