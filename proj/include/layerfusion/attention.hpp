// Numeric kernels shared by every other module: softmax attention with
// probability capture, min-max normalization, sigmoid, layer norm and
// bilinear resizing of per-token fields.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "layerfusion/tensor.hpp"

namespace layerfusion {

/// Row-sum tolerance for attention probability maps.
inline constexpr float kRowSumTolerance = 1e-5f;

/// Numerically stable softmax along `axis` (max-subtracted before exp).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw ArgumentError("softmax axis " + std::to_string(axis) + " invalid for shape " +
                            shape_string(x.dims()));
    const auto& dims = x.dims();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
    const std::size_t n = dims[axis];

    Tensor out(dims);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const float e = std::exp(x[base + j * inner] - mx);
                out[base + j * inner] = e;
                sum += e;
            }
            const float inv = static_cast<float>(1.0 / sum);
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
        }
    }
    return out;
}

/// Post-softmax multi-head attention probabilities, [heads, queries, keys].
/// Self-attention maps have keys == queries; cross-attention maps have one
/// key per conditioning token.
class AttnProbMap {
public:
    AttnProbMap() = default;

    explicit AttnProbMap(Tensor probs) : probs_(std::move(probs)) {
        require_rank(probs_, 3, "attention probability map");
    }

    std::size_t heads() const { return probs_.dim(0); }
    std::size_t queries() const { return probs_.dim(1); }
    std::size_t keys() const { return probs_.dim(2); }
    bool is_self_attention() const { return keys() == queries(); }

    const Tensor& probs() const noexcept { return probs_; }

    float operator()(std::size_t head, std::size_t query, std::size_t key) const noexcept {
        return probs_.at(head, query, key);
    }

    /// Largest |row sum - 1| over all (head, query) rows.
    float max_row_deviation() const {
        float worst = 0.0f;
        for (std::size_t h = 0; h < heads(); ++h)
            for (std::size_t q = 0; q < queries(); ++q) {
                double sum = 0.0;
                for (std::size_t k = 0; k < keys(); ++k) sum += probs_.at(h, q, k);
                worst = std::max(worst, static_cast<float>(std::abs(sum - 1.0)));
            }
        return worst;
    }

    /// Throws ArgumentError unless every row is a probability distribution.
    void validate(float tolerance = kRowSumTolerance) const {
        for (float v : probs_.values())
            if (!(v >= 0.0f && v <= 1.0f))
                throw ArgumentError("attention probability outside [0,1]");
        if (max_row_deviation() > tolerance)
            throw ArgumentError("attention map rows are not stochastic");
    }

    friend bool operator==(const AttnProbMap&, const AttnProbMap&) = default;

private:
    Tensor probs_{std::vector<std::size_t>{1, 1, 1}, {1.0f}};
};

/// probs[h] . v[:, head h columns], concatenated over heads -> [M x dv].
inline Tensor apply_attention_probs(const AttnProbMap& probs, const Tensor& v) {
    require_rank(v, 2, "values");
    const std::size_t heads = probs.heads(), m = probs.queries(), kl = probs.keys();
    const std::size_t dv = v.dim(1);
    if (v.dim(0) != kl) throw ArgumentError("values rows must equal key count");
    if (dv % heads != 0) throw ArgumentError("value width not divisible by head count");
    const std::size_t hd = dv / heads;

    Tensor out({m, dv});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < m; ++i) {
            float* o = &out.at(i, h * hd);
            for (std::size_t j = 0; j < kl; ++j) {
                const float p = probs(h, i, j);
                const float* vr = &v.at(j, h * hd);
                for (std::size_t c = 0; c < hd; ++c) o[c] += p * vr[c];
            }
        }
    return out;
}

struct AttentionResult {
    Tensor out;
    AttnProbMap probs;
};

/// Scaled dot-product multi-head attention that also returns the per-head
/// probability maps. Heads split the feature axis into equal contiguous
/// chunks; each head's logits are scaled by 1/sqrt(dk / heads).
inline AttentionResult attention_with_probs(const Tensor& q, const Tensor& k, const Tensor& v,
                                            std::size_t heads) {
    require_rank(q, 2, "queries");
    require_rank(k, 2, "keys");
    require_rank(v, 2, "values");
    if (heads == 0) throw ArgumentError("head count must be positive");
    const std::size_t m = q.dim(0), dk = q.dim(1), kl = k.dim(0);
    if (k.dim(1) != dk)
        throw ArgumentError("query/key width mismatch: " + shape_string(q.dims()) + " vs " +
                            shape_string(k.dims()));
    if (v.dim(0) != kl)
        throw ArgumentError("key/value length mismatch: " + shape_string(k.dims()) + " vs " +
                            shape_string(v.dims()));
    if (dk % heads != 0 || v.dim(1) % heads != 0)
        throw ArgumentError("feature widths must be divisible by head count " +
                            std::to_string(heads));
    const std::size_t hd = dk / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Tensor logits({heads, m, kl});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < m; ++i) {
            const float* qi = &q.at(i, h * hd);
            for (std::size_t j = 0; j < kl; ++j) {
                const float* kj = &k.at(j, h * hd);
                float dot = 0.0f;
                for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
                logits.at(h, i, j) = dot * scale;
            }
        }

    AttnProbMap probs(softmax(logits, 2));
    Tensor out = apply_attention_probs(probs, v);
    return {std::move(out), std::move(probs)};
}

/// Maps min to 0 and max to 1. A constant input maps to all zeros.
inline Tensor minmax_normalize(const Tensor& x) {
    const float lo = x.min();
    const float hi = x.max();
    Tensor out(x.dims());
    if (!(hi > lo)) return out;
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = static_cast<float>((static_cast<double>(x[i]) - lo) / range);
    return out;
}

inline float sigmoid(float x) {
    const double xd = x;
    if (xd >= 0.0) return static_cast<float>(1.0 / (1.0 + std::exp(-xd)));
    const double e = std::exp(xd);
    return static_cast<float>(e / (1.0 + e));
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

/// Bilinear resize of a per-token field laid out as an h x w grid (row-major).
/// Corner-aligned: the four corner tokens of source and destination coincide,
/// so equal shapes reproduce the input bit for bit.
inline Tensor resize_token_field(const Tensor& field, Shape2 src, Shape2 dst) {
    if (src.area() == 0 || dst.area() == 0) throw ArgumentError("empty grid shape");
    if (field.size() != src.area())
        throw ArgumentError("field length " + std::to_string(field.size()) +
                            " does not match grid " + to_string(src));

    auto source_coord = [](std::size_t i, std::size_t n_src, std::size_t n_dst) {
        if (n_dst == 1 || n_src == 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(n_src - 1) /
               static_cast<double>(n_dst - 1);
    };

    const float lo = field.min(), hi = field.max();
    Tensor out({dst.area()});
    for (std::size_t y = 0; y < dst.height; ++y) {
        const double sy = source_coord(y, src.height, dst.height);
        const std::size_t y0 = std::min(static_cast<std::size_t>(sy), src.height - 1);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const float fy = static_cast<float>(sy - static_cast<double>(y0));
        for (std::size_t x = 0; x < dst.width; ++x) {
            const double sx = source_coord(x, src.width, dst.width);
            const std::size_t x0 = std::min(static_cast<std::size_t>(sx), src.width - 1);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const float fx = static_cast<float>(sx - static_cast<double>(x0));
            const float v00 = field[y0 * src.width + x0], v01 = field[y0 * src.width + x1];
            const float v10 = field[y1 * src.width + x0], v11 = field[y1 * src.width + x1];
            const float top = v00 * (1.0f - fx) + v01 * fx;
            const float bottom = v10 * (1.0f - fx) + v11 * fx;
            // rounding may step one ulp outside the source range
            out[y * dst.width + x] = std::clamp(top * (1.0f - fy) + bottom * fy, lo, hi);
        }
    }
    return out;
}

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
    float epsilon = 1e-5f;
};

/// Per-row layer normalization of an [M x D] tensor.
inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
    require_rank(x, 2, "layer_norm input");
    const std::size_t m = x.dim(0), d = x.dim(1);
    if (p.gamma.size() != d || p.beta.size() != d)
        throw ArgumentError("layer_norm parameter width mismatch");
    Tensor out({m, d});
    for (std::size_t i = 0; i < m; ++i) {
        float mean = 0.0f;
        for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (std::size_t j = 0; j < d; ++j) {
            const float c = x.at(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + p.epsilon);
        for (std::size_t j = 0; j < d; ++j)
            out.at(i, j) = (x.at(i, j) - mean) * inv * p.gamma[j] + p.beta[j];
    }
    return out;
}

/// Projection weights of one attention layer. Matrices are stored
/// [in x out] so that projection is `x . w`.
struct AttentionWeights {
    Tensor to_q;
    Tensor to_k;
    Tensor to_v;
    Tensor to_out;
    Tensor out_bias;
    std::size_t heads = 1;
};

/// Projected attention: queries come from `query_tokens`, keys and values
/// from `context_tokens`. `out` includes the output projection.
inline AttentionResult attend(const AttentionWeights& w, const Tensor& query_tokens,
                              const Tensor& context_tokens) {
    Tensor q = matmul(query_tokens, w.to_q);
    Tensor k = matmul(context_tokens, w.to_k);
    Tensor v = matmul(context_tokens, w.to_v);
    AttentionResult r = attention_with_probs(q, k, v, w.heads);
    Tensor out = matmul(r.out, w.to_out);
    add_row_bias(out, w.out_bias);
    return {std::move(out), std::move(r.probs)};
}

}  // namespace layerfusion
