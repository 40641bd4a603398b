// Generative priors read off the foreground model's attention maps.
//
// Structure prior: the inverse participation ratio of each query's
// head-averaged self-attention row, s_i = 1 / sum_j m_ij^2, is large for
// diffuse rows and small for peaked ones. After min-max normalization it is
// flipped (1 - norm(s)) so that dense, concentrated rows score high.
//
// Content prior: the head-mean of the cross-attention probability each
// spatial token assigns to the <EOS> text token.

#pragma once

#include <concepts>
#include <cstddef>
#include <string>
#include <utility>

#include "layerfusion/attention.hpp"

namespace layerfusion {

/// Text conditioning as token embeddings [T x dmodel] with an explicit
/// end-of-sequence position.
struct Conditioning {
    Tensor tokens;
    std::size_t eos_index = 0;
    std::string label;

    std::size_t length() const { return tokens.dim(0); }
};

struct StructurePrior {
    Tensor values;         // [M], in [0,1]
    Shape2 spatial_shape;  // h * w == M
    std::string source_layer;
    float timestep = 0.0f;  // sampler timestep t in [0, T_total]
};

struct ContentPrior {
    Tensor values;  // [M], in [0,1]
    Shape2 spatial_shape;
    std::size_t eos_index = 0;
    std::string layer;
};

/// Mean over heads -> [M x K].
inline Tensor head_average(const AttnProbMap& m) {
    const std::size_t heads = m.heads(), q = m.queries(), k = m.keys();
    Tensor out({q, k});
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double sum = 0.0;
            for (std::size_t h = 0; h < heads; ++h) sum += m(h, i, j);
            out.at(i, j) = static_cast<float>(sum / static_cast<double>(heads));
        }
    return out;
}

/// Per-query inverse participation ratio of the head-averaged self-attention
/// map. Each score lies in [1, M] for row-stochastic input.
inline Tensor sparsity_scores(const AttnProbMap& m) {
    if (!m.is_self_attention())
        throw ArgumentError("sparsity scores need a self-attention map (keys " +
                            std::to_string(m.keys()) + " != queries " +
                            std::to_string(m.queries()) + ")");
    const Tensor avg = head_average(m);
    const std::size_t n = m.queries();
    Tensor s({n});
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (float p : avg.row(i)) sq += static_cast<double>(p) * p;
        s[i] = static_cast<float>(1.0 / sq);
    }
    return s;
}

inline StructurePrior structure_prior(const AttnProbMap& m, Shape2 spatial_shape,
                                      std::string layer_id, float timestep) {
    if (spatial_shape.area() != m.queries())
        throw ArgumentError("spatial shape " + to_string(spatial_shape) +
                            " does not cover " + std::to_string(m.queries()) + " tokens");
    const Tensor scores = sparsity_scores(m);
    Tensor values = minmax_normalize(scores);
    // Constant scores carry no evidence either way, so stay at zero.
    if (scores.max() > scores.min())
        for (float& v : values.values()) v = 1.0f - v;
    return {std::move(values), spatial_shape, std::move(layer_id), timestep};
}

inline ContentPrior content_prior(const AttnProbMap& n, std::size_t eos_index,
                                  Shape2 spatial_shape, std::string layer_id) {
    if (eos_index >= n.keys())
        throw ArgumentError("eos index " + std::to_string(eos_index) + " out of range for " +
                            std::to_string(n.keys()) + " conditioning tokens");
    if (spatial_shape.area() != n.queries())
        throw ArgumentError("spatial shape " + to_string(spatial_shape) +
                            " does not cover " + std::to_string(n.queries()) + " tokens");
    const std::size_t heads = n.heads(), q = n.queries();
    Tensor c({q});
    for (std::size_t i = 0; i < q; ++i) {
        double sum = 0.0;
        for (std::size_t h = 0; h < heads; ++h) sum += n(h, i, eos_index);
        c[i] = static_cast<float>(sum / static_cast<double>(heads));
    }
    return {std::move(c), spatial_shape, eos_index, std::move(layer_id)};
}

/// A self-attention map captured at a named layer together with that
/// layer's token grid.
struct CapturedMap {
    AttnProbMap probs;
    Shape2 spatial_shape;
    std::string layer;
};

/// A denoiser that can run one forward pass and hand back the
/// self-attention probabilities of a named layer.
template <class D, class Latent>
concept SelfAttentionCapturing =
    requires(const D& d, const Latent& z, float t, const Conditioning& c, const std::string& layer) {
        { d.capture_self_attention(z, t, c, layer) } -> std::convertible_to<CapturedMap>;
    };

/// One extra forward pass of the foreground model; the noise prediction is
/// dropped and the structure prior is computed from the captured map. The
/// denoiser is taken by const reference and never mutated. `captured`, when
/// given, receives the raw map.
template <class Denoiser, class Latent>
    requires SelfAttentionCapturing<Denoiser, Latent>
StructurePrior prior_pass(const Denoiser& fg, const Latent& z_t, float timestep,
                          const Conditioning& cond_fg, const std::string& layer,
                          CapturedMap* captured = nullptr) {
    CapturedMap cap = fg.capture_self_attention(z_t, timestep, cond_fg, layer);
    StructurePrior s = structure_prior(cap.probs, cap.spatial_shape, cap.layer, timestep);
    if (captured) *captured = std::move(cap);
    return s;
}

}  // namespace layerfusion
