// Miniature transformer denoiser standing in for the RGB and foreground
// diffusion models.
//
// Architecture (D = model_dim, C = latent_channels, F = 4 D, B = blocks):
//   embed:  tokens[M x C] . W_in[C x D] + b_in[D] + (t / T_total) * w_time[D]
//           + fixed 2-D sinusoidal position code
//   block b (pre-norm, residual):
//           x += SelfAttn(LN1(x));  x += CrossAttn(LN2(x), text);
//           x += W2 . gelu(W1 . LN3(x) + b1) + b2
//           attention layers: to_q, to_k, to_v, to_out [D x D] + out bias [D]
//   head:   LN_out(x) . W_out[D x C] + b_out[C]
// Block b works on a grid downsampled by 2^min(b, B-1-b) (2x2 average pool
// on the way down, nearest upsample + skip on the way up), so inner blocks
// see coarser token grids, as in a U-Net.
//
// Parameter count: (C D + 2 D) + B (16 D^2 + 13 D) + (2 D + D C + C).
// For the defaults (C=4, D=32, B=3) that is 50 788.
//
// Weights are drawn from one SplitMix64 stream seeded with weight_seed, in
// this order: W_in, b_in, w_time; then per block: LN1 (gamma, beta),
// attn1 (to_q, to_k, to_v, to_out, out bias), LN2, attn2 (same order), LN3,
// W1, b1, W2, b2; then LN_out, W_out, b_out. Matrices are filled row-major
// [in x out] with uniform(-a, a), a = sqrt(3 / fan_in); biases use the same
// bound as their matrix; LN gamma = 1 + uniform(-0.1, 0.1) and
// beta = uniform(-0.1, 0.1); w_time is uniform(-1, 1).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "layerfusion/attention.hpp"
#include "layerfusion/blending.hpp"
#include "layerfusion/priors.hpp"
#include "layerfusion/toy/rng.hpp"

namespace layerfusion::toy {

struct ToyDenoiserConfig {
    std::size_t latent_channels = 4;
    Shape2 latent_size{16, 16};
    std::size_t model_dim = 32;
    std::size_t heads = 4;
    std::size_t blocks = 3;
    std::size_t text_len = 8;
    std::uint64_t weight_seed = 0;
    float train_timesteps = 1000.0f;

    std::size_t ff_dim() const { return 4 * model_dim; }

    std::size_t level(std::size_t block) const {
        return std::min(block, blocks - 1 - block);
    }

    std::size_t max_level() const { return (blocks - 1) / 2; }

    void validate() const {
        if (latent_channels == 0 || model_dim == 0 || heads == 0 || blocks == 0 ||
            text_len < 2 || latent_size.area() == 0)
            throw ConfigError("toy denoiser dimensions must be positive (text_len >= 2)");
        if (model_dim % heads != 0)
            throw ConfigError("model_dim " + std::to_string(model_dim) +
                              " not divisible by heads " + std::to_string(heads));
        const std::size_t f = std::size_t{1} << max_level();
        if (latent_size.height % f != 0 || latent_size.width % f != 0)
            throw ConfigError("latent size " + to_string(latent_size) +
                              " not divisible by the downsampling factor " + std::to_string(f));
    }

    /// Closed-form parameter count of the architecture above.
    std::size_t expected_parameter_count() const {
        const std::size_t c = latent_channels, d = model_dim, b = blocks;
        return (c * d + 2 * d) + b * (16 * d * d + 13 * d) + (2 * d + d * c + c);
    }
};

struct FeedForwardWeights {
    Tensor w1, b1, w2, b2;
};

struct BlockWeights {
    LayerNormParams norm1;
    AttentionWeights self_attn;
    LayerNormParams norm2;
    AttentionWeights cross_attn;
    LayerNormParams norm3;
    FeedForwardWeights ff;
};

struct LayerInfo {
    std::string id;
    bool self_attention = true;
    std::size_t block = 0;
    Shape2 spatial_shape;
};

inline std::string self_layer_id(std::size_t block) {
    return "block." + std::to_string(block) + ".attn1";
}
inline std::string cross_layer_id(std::size_t block) {
    return "block." + std::to_string(block) + ".attn2";
}

class ToyDenoiser {
public:
    static ToyDenoiser build(const ToyDenoiserConfig& cfg) {
        cfg.validate();
        ToyDenoiser d(cfg);
        SplitMix64 rng(cfg.weight_seed);
        d.init(
            [&](std::vector<std::size_t> dims, float bound) {
                Tensor t(std::move(dims));
                for (float& v : t.values()) v = rng.uniform(-bound, bound);
                return t;
            },
            [&](std::size_t n) {
                LayerNormParams p{Tensor({n}), Tensor({n})};
                for (float& v : p.gamma.values()) v = 1.0f + rng.uniform(-0.1f, 0.1f);
                for (float& v : p.beta.values()) v = rng.uniform(-0.1f, 0.1f);
                return p;
            });
        return d;
    }

    /// Every weight (including layer-norm gains) is zero.
    static ToyDenoiser with_zero_weights(const ToyDenoiserConfig& cfg) {
        cfg.validate();
        ToyDenoiser d(cfg);
        d.init([](std::vector<std::size_t> dims, float) { return Tensor(std::move(dims)); },
               [](std::size_t n) { return LayerNormParams{Tensor({n}), Tensor({n})}; });
        return d;
    }

    const ToyDenoiserConfig& config() const noexcept { return cfg_; }
    std::size_t block_count() const noexcept { return blocks_.size(); }
    const BlockWeights& block(std::size_t b) const { return blocks_.at(b); }

    Shape2 block_shape(std::size_t b) const {
        const std::size_t f = std::size_t{1} << cfg_.level(b);
        return {cfg_.latent_size.height / f, cfg_.latent_size.width / f};
    }

    std::vector<LayerInfo> layers() const {
        std::vector<LayerInfo> out;
        for (std::size_t b = 0; b < block_count(); ++b) {
            out.push_back({self_layer_id(b), true, b, block_shape(b)});
            out.push_back({cross_layer_id(b), false, b, block_shape(b)});
        }
        return out;
    }

    std::string last_self_attention_layer() const { return self_layer_id(block_count() - 1); }

    AttentionLayerView self_view(std::size_t b) const {
        return {blocks_.at(b).norm1, blocks_.at(b).self_attn};
    }
    AttentionLayerView cross_view(std::size_t b) const {
        return {blocks_.at(b).norm2, blocks_.at(b).cross_attn};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        visit_parameters([&](const Tensor& t) { n += t.size(); });
        return n;
    }

    /// FNV-1a over the little-endian bytes of every parameter, in draw order.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        visit_parameters([&](const Tensor& t) {
            for (float v : t.values()) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, sizeof bits);
                char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                                 static_cast<char>((bits >> 16) & 0xFF),
                                 static_cast<char>((bits >> 24) & 0xFF)};
                h = fnv1a64(std::string_view(bytes, 4), h);
            }
        });
        return h;
    }

    /// Latent [C x h x w] -> tokens [M x D].
    Tensor embed(const Tensor& latent, float timestep) const {
        const std::size_t c = cfg_.latent_channels, m = cfg_.latent_size.area();
        if (latent.dims() != std::vector<std::size_t>{c, cfg_.latent_size.height,
                                                      cfg_.latent_size.width})
            throw ArgumentError("latent shape " + shape_string(latent.dims()) +
                                " does not match denoiser geometry");
        Tensor tokens({m, c});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < m; ++i) tokens.at(i, ch) = latent[ch * m + i];
        Tensor x = matmul(tokens, w_in_);
        add_row_bias(x, b_in_);
        const float tf = timestep / cfg_.train_timesteps;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < cfg_.model_dim; ++j)
                x.at(i, j) += tf * w_time_[j] + pos_code_.at(i, j);
        return x;
    }

    /// Moves `x` to block b's resolution. Down-steps push a skip; up-steps
    /// pop one.
    Tensor enter_block(std::size_t b, Tensor x, std::vector<Tensor>& skips) const {
        const std::size_t prev = b == 0 ? 0 : cfg_.level(b - 1);
        const std::size_t cur = cfg_.level(b);
        if (cur > prev) {
            const Shape2 from = b == 0 ? cfg_.latent_size : block_shape(b - 1);
            skips.push_back(x);
            return pool2x(x, from);
        }
        if (cur < prev) {
            Tensor up = upsample2x(x, block_shape(b - 1));
            Tensor skip = std::move(skips.back());
            skips.pop_back();
            return add(up, skip);
        }
        return x;
    }

    /// x + FF(LN3(x)).
    Tensor feed_forward(std::size_t b, const Tensor& x) const {
        const BlockWeights& w = blocks_.at(b);
        Tensor h = matmul(layer_norm(x, w.norm3), w.ff.w1);
        add_row_bias(h, w.ff.b1);
        for (float& v : h.values()) v = gelu(v);
        Tensor o = matmul(h, w.ff.w2);
        add_row_bias(o, w.ff.b2);
        return add(x, o);
    }

    /// Tokens [M x D] at full resolution -> noise prediction [C x h x w].
    Tensor head(const Tensor& x) const {
        Tensor o = matmul(layer_norm(x, norm_out_), w_out_);
        add_row_bias(o, b_out_);
        const std::size_t c = cfg_.latent_channels, m = cfg_.latent_size.area();
        Tensor eps({c, cfg_.latent_size.height, cfg_.latent_size.width});
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < m; ++i) eps[ch * m + i] = o.at(i, ch);
        return eps;
    }

    Tensor predict(const Tensor& latent, float timestep, const Conditioning& cond) const {
        return run(latent, timestep, cond, nullptr, nullptr);
    }

    CapturedMap capture_self_attention(const Tensor& latent, float timestep,
                                       const Conditioning& cond, const std::string& layer) const {
        std::optional<CapturedMap> captured;
        run(latent, timestep, cond, &layer, &captured);
        if (!captured)
            throw ConfigError("capture layer '" + layer + "' is not a self-attention layer of " +
                              "this denoiser");
        return std::move(*captured);
    }

private:
    explicit ToyDenoiser(const ToyDenoiserConfig& cfg) : cfg_(cfg) {
        const std::size_t m = cfg.latent_size.area(), d = cfg.model_dim;
        pos_code_ = Tensor({m, d});
        const std::size_t half = d / 2;
        for (std::size_t i = 0; i < m; ++i) {
            const double ys = static_cast<double>(i / cfg.latent_size.width);
            const double xs = static_cast<double>(i % cfg.latent_size.width);
            for (std::size_t j = 0; j < d; ++j) {
                const bool second = j >= half;
                const std::size_t k = second ? j - half : j;
                const std::size_t width = second ? d - half : half;
                const double freq = std::pow(10000.0, -static_cast<double>(k / 2 * 2) /
                                                          static_cast<double>(std::max<std::size_t>(width, 1)));
                const double p = (second ? xs : ys) * freq;
                pos_code_.at(i, j) = static_cast<float>(k % 2 == 0 ? std::sin(p) : std::cos(p));
            }
        }
    }

    template <class MakeMatrix, class MakeNorm>
    void init(MakeMatrix&& mat, MakeNorm&& norm) {
        const std::size_t c = cfg_.latent_channels, d = cfg_.model_dim, f = cfg_.ff_dim();
        const auto bound = [](std::size_t fan_in) {
            return std::sqrt(3.0f / static_cast<float>(fan_in));
        };
        w_in_ = mat({c, d}, bound(c));
        b_in_ = mat({d}, bound(c));
        w_time_ = mat({d}, 1.0f);
        blocks_.clear();
        for (std::size_t b = 0; b < cfg_.blocks; ++b) {
            BlockWeights w;
            auto attention = [&] {
                AttentionWeights a;
                a.to_q = mat({d, d}, bound(d));
                a.to_k = mat({d, d}, bound(d));
                a.to_v = mat({d, d}, bound(d));
                a.to_out = mat({d, d}, bound(d));
                a.out_bias = mat({d}, bound(d));
                a.heads = cfg_.heads;
                return a;
            };
            w.norm1 = norm(d);
            w.self_attn = attention();
            w.norm2 = norm(d);
            w.cross_attn = attention();
            w.norm3 = norm(d);
            w.ff.w1 = mat({d, f}, bound(d));
            w.ff.b1 = mat({f}, bound(d));
            w.ff.w2 = mat({f, d}, bound(f));
            w.ff.b2 = mat({d}, bound(f));
            blocks_.push_back(std::move(w));
        }
        norm_out_ = norm(d);
        w_out_ = mat({d, c}, bound(d));
        b_out_ = mat({c}, bound(d));
    }

    template <class Fn>
    void visit_parameters(Fn&& fn) const {
        fn(w_in_);
        fn(b_in_);
        fn(w_time_);
        auto norm = [&](const LayerNormParams& p) {
            fn(p.gamma);
            fn(p.beta);
        };
        auto attention = [&](const AttentionWeights& a) {
            fn(a.to_q);
            fn(a.to_k);
            fn(a.to_v);
            fn(a.to_out);
            fn(a.out_bias);
        };
        for (const BlockWeights& w : blocks_) {
            norm(w.norm1);
            attention(w.self_attn);
            norm(w.norm2);
            attention(w.cross_attn);
            norm(w.norm3);
            fn(w.ff.w1);
            fn(w.ff.b1);
            fn(w.ff.w2);
            fn(w.ff.b2);
        }
        norm(norm_out_);
        fn(w_out_);
        fn(b_out_);
    }

    static float gelu(float v) {
        return 0.5f * v * (1.0f + std::tanh(0.7978845608f * (v + 0.044715f * v * v * v)));
    }

    static Tensor pool2x(const Tensor& x, Shape2 from) {
        const Shape2 to{from.height / 2, from.width / 2};
        const std::size_t d = x.dim(1);
        Tensor out({to.area(), d});
        for (std::size_t y = 0; y < to.height; ++y)
            for (std::size_t xx = 0; xx < to.width; ++xx)
                for (std::size_t j = 0; j < d; ++j) {
                    const std::size_t r0 = (2 * y) * from.width + 2 * xx;
                    const std::size_t r1 = r0 + from.width;
                    out.at(y * to.width + xx, j) =
                        0.25f * (x.at(r0, j) + x.at(r0 + 1, j) + x.at(r1, j) + x.at(r1 + 1, j));
                }
        return out;
    }

    static Tensor upsample2x(const Tensor& x, Shape2 from) {
        const Shape2 to{from.height * 2, from.width * 2};
        const std::size_t d = x.dim(1);
        Tensor out({to.area(), d});
        for (std::size_t y = 0; y < to.height; ++y)
            for (std::size_t xx = 0; xx < to.width; ++xx)
                for (std::size_t j = 0; j < d; ++j)
                    out.at(y * to.width + xx, j) = x.at((y / 2) * from.width + xx / 2, j);
        return out;
    }

    Tensor run(const Tensor& latent, float timestep, const Conditioning& cond,
               const std::string* capture_layer, std::optional<CapturedMap>* captured) const {
        if (cond.tokens.rank() != 2 || cond.tokens.dim(1) != cfg_.model_dim)
            throw ArgumentError("conditioning width must equal model_dim");
        Tensor x = embed(latent, timestep);
        std::vector<Tensor> skips;
        for (std::size_t b = 0; b < block_count(); ++b) {
            const BlockWeights& w = blocks_[b];
            x = enter_block(b, std::move(x), skips);

            const Tensor n1 = layer_norm(x, w.norm1);
            AttentionResult sa = attend(w.self_attn, n1, n1);
            if (capture_layer && *capture_layer == self_layer_id(b)) {
                *captured = CapturedMap{std::move(sa.probs), block_shape(b), *capture_layer};
                return {};
            }
            x = add(x, sa.out);

            const Tensor n2 = layer_norm(x, w.norm2);
            x = add(x, attend(w.cross_attn, n2, cond.tokens).out);
            x = feed_forward(b, x);
        }
        return head(x);
    }

    ToyDenoiserConfig cfg_;
    Tensor pos_code_;
    Tensor w_in_, b_in_, w_time_;
    std::vector<BlockWeights> blocks_;
    LayerNormParams norm_out_;
    Tensor w_out_, b_out_;
};

}  // namespace layerfusion::toy
