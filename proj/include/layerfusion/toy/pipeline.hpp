// Three-stream generation: foreground (FG model), blended and background
// (both RGB model), coupled through the attention blending hooks.
//
// Per sampler step:
//   1. prior pass on the FG model -> structure prior s (every prior_every steps)
//   2. one joint forward of all three streams; at every block the
//      self-attention step shares BG/blended keys and the cross-attention
//      step extracts the content prior and applies the blend equations
//   3. Euler update of each latent
// FG and blended start from the same noise draw; BG takes the next draw from
// the same seeded stream.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "layerfusion/blending.hpp"
#include "layerfusion/image.hpp"
#include "layerfusion/priors.hpp"
#include "layerfusion/toy/conditioning.hpp"
#include "layerfusion/toy/denoiser.hpp"
#include "layerfusion/toy/rng.hpp"
#include "layerfusion/toy/sampler.hpp"

namespace layerfusion::toy {

enum class Stream { Foreground, Blended, Background };

inline const char* stream_name(Stream s) {
    switch (s) {
        case Stream::Foreground: return "foreground";
        case Stream::Blended: return "blended";
        case Stream::Background: return "background";
    }
    return "?";
}

/// Passed to PipelineOptions::observer after every attention step.
struct BlendTrace {
    std::size_t step;
    std::size_t block;
    const std::string& layer;
    bool cross_attention;
    const BlendStepResult& result;
};

struct PipelineOptions {
    /// Steps whose masks and attention maps are archived; empty selects
    /// {0.2 N, 0.5 N, 0.8 N}. The final step is always archived.
    std::vector<std::size_t> snapshot_steps;
    /// Recompute the structure prior every k steps (1 = every step).
    std::size_t prior_every = 1;
    /// Self-attention layer of the FG model used for the structure prior;
    /// empty selects its last self-attention layer.
    std::string capture_layer;
    /// Decoded image size = latent size * image_scale.
    std::size_t image_scale = 4;
    std::function<void(const BlendTrace&)> observer;
};

inline std::vector<std::size_t> default_snapshot_steps(std::size_t steps) {
    std::set<std::size_t> s{steps * 2 / 10, steps * 5 / 10, steps * 8 / 10};
    return {s.begin(), s.end()};
}

struct MaskSnapshot {
    std::size_t step = 0;
    std::string layer;
    BlendMasks masks;
    StructurePrior structure;  // at the capture layer's resolution
    ContentPrior content;
    AttnProbMap cross_probs;  // FG cross-attention at `layer`
};

/// Self-attention map from which the structure prior in force at `step` was
/// computed.
struct StructureCapture {
    std::size_t step = 0;
    float timestep = 0.0f;
    CapturedMap map;
};

struct StreamLatents {
    Tensor fg;
    Tensor blended;
    Tensor bg;
};

struct LayerTriplet {
    Image fg_rgba;
    Image bg_rgb;
    Image blended_rgb;
    std::vector<MaskSnapshot> snapshots;
    std::vector<StructureCapture> structure_captures;
    StreamLatents latents;
    std::size_t final_step = 0;
    std::string alpha_layer;
};

/// Fixed seeded map from latent channels to RGB, squashed by a sigmoid.
class ToyDecoder {
public:
    static constexpr std::uint64_t kSeed = 0xDEC0DEull;

    explicit ToyDecoder(std::size_t channels) : weights_({3, channels}), bias_({3}) {
        SplitMix64 rng(kSeed);
        const float bound = std::sqrt(3.0f / static_cast<float>(channels));
        for (float& v : weights_.values()) v = rng.uniform(-bound, bound);
        for (float& v : bias_.values()) v = rng.uniform(-0.1f, 0.1f);
    }

    /// Latent [C x h x w] -> RGB image of `size`, bilinear upsampling first.
    Image decode(const Tensor& latent, Shape2 size) const {
        const std::size_t c = latent.dim(0);
        const Shape2 src{latent.dim(1), latent.dim(2)};
        std::vector<Tensor> planes;
        for (std::size_t ch = 0; ch < c; ++ch) {
            Tensor plane({src.area()});
            for (std::size_t i = 0; i < src.area(); ++i) plane[i] = latent[ch * src.area() + i];
            planes.push_back(resize_token_field(plane, src, size));
        }
        Image img(size.width, size.height, 3);
        for (std::size_t p = 0; p < size.area(); ++p)
            for (std::size_t k = 0; k < 3; ++k) {
                float acc = bias_[k];
                for (std::size_t ch = 0; ch < c; ++ch) acc += weights_.at(k, ch) * planes[ch][p];
                img.data[p * 3 + k] = sigmoid(acc);
            }
        return img;
    }

private:
    Tensor weights_;
    Tensor bias_;
};

/// Alpha channel from the hard mask: bilinear resize to the image grid,
/// clamped to [0,1].
inline Image decode_alpha(const BlendMasks& masks, Shape2 image_size) {
    Tensor a = resize_token_field(masks.hard, masks.spatial_shape, image_size);
    Image img(image_size.width, image_size.height, 1);
    for (std::size_t i = 0; i < a.size(); ++i) img.data[i] = std::clamp(a[i], 0.0f, 1.0f);
    return img;
}

inline const MaskSnapshot& find_snapshot(std::span<const MaskSnapshot> snapshots, std::size_t step,
                                         const std::string& layer) {
    for (const MaskSnapshot& s : snapshots)
        if (s.step == step && s.layer == layer) return s;
    throw ConfigError("no mask snapshot for layer '" + layer + "' at step " + std::to_string(step));
}

/// Alpha from the archived final-step masks of `triplet.alpha_layer`.
inline Image decode_alpha(const LayerTriplet& triplet, Shape2 image_size) {
    return decode_alpha(find_snapshot(triplet.snapshots, triplet.final_step, triplet.alpha_layer).masks,
                        image_size);
}

inline void require_same_geometry(const ToyDenoiser& a, const ToyDenoiser& b) {
    const auto& x = a.config();
    const auto& y = b.config();
    if (x.latent_channels != y.latent_channels || x.latent_size != y.latent_size ||
        x.model_dim != y.model_dim || x.blocks != y.blocks || x.text_len != y.text_len ||
        x.train_timesteps != y.train_timesteps)
        throw ConfigError("foreground and RGB denoisers must share latent geometry");
}

inline void require_conditioning(const ToyDenoiser& d, const Conditioning& c) {
    const auto& cfg = d.config();
    if (c.tokens.rank() != 2 || c.tokens.dim(0) != cfg.text_len || c.tokens.dim(1) != cfg.model_dim)
        throw ConfigError("conditioning '" + c.label + "' must be [" + std::to_string(cfg.text_len) +
                          " x " + std::to_string(cfg.model_dim) + "]");
    if (c.eos_index >= cfg.text_len) throw ConfigError("eos index out of range");
}

/// Initial noise: first draw for FG and blended, second for BG.
inline std::pair<Tensor, Tensor> initial_noise(const ToyDenoiserConfig& cfg, std::uint64_t seed) {
    SplitMix64 rng(seed);
    const std::vector<std::size_t> dims{cfg.latent_channels, cfg.latent_size.height,
                                        cfg.latent_size.width};
    Tensor a = gaussian_latent(rng, dims);
    Tensor b = gaussian_latent(rng, dims);
    return {std::move(a), std::move(b)};
}

inline void check_finite(const Tensor& x, std::size_t step, Stream s) {
    if (!x.all_finite()) throw DivergenceError(step, stream_name(s));
}

/// Single-stream sampling with no hooks installed. Returns the final latent.
inline Tensor sample_single(const ToyDenoiser& model, const Conditioning& cond, const Tensor& noise,
                            const SamplerConfig& sampler, Stream label = Stream::Foreground) {
    const Schedule sch = make_schedule(sampler);
    require_conditioning(model, cond);
    const auto& cfg = model.config();
    const std::optional<Conditioning> null_cond =
        sampler.guidance_scale > 0.0f
            ? std::optional<Conditioning>(encode_prompt("", cfg.text_len, cfg.model_dim))
            : std::nullopt;
    Tensor x = noise;
    for (float& v : x.values()) v *= sch.sigmas[0];
    for (std::size_t i = 0; i < sch.steps(); ++i) {
        const Tensor in = scaled_input(x, sch.sigmas[i]);
        Tensor eps = model.predict(in, sch.timesteps[i], cond);
        if (null_cond)
            eps = guided(eps, model.predict(in, sch.timesteps[i], *null_cond), sampler.guidance_scale);
        euler_update(x, eps, sch.sigmas[i], sch.sigmas[i + 1]);
        check_finite(x, i, label);
    }
    return x;
}

namespace detail {

struct JointForward {
    const ToyDenoiser& fg;
    const ToyDenoiser& rgb;
    const Conditioning& cond_fg;
    const Conditioning& cond_bg;
    const BlendConfig& blend;
    const PipelineOptions& options;

    StreamLatents run(const StreamLatents& inputs, float timestep, const StructurePrior& s,
                      std::size_t step, std::vector<MaskSnapshot>* snapshots) const {
        Tensor xf = fg.embed(inputs.fg, timestep);
        Tensor xb = rgb.embed(inputs.blended, timestep);
        Tensor xg = rgb.embed(inputs.bg, timestep);
        std::vector<Tensor> sf, sb, sg;

        for (std::size_t b = 0; b < fg.block_count(); ++b) {
            xf = fg.enter_block(b, std::move(xf), sf);
            xb = rgb.enter_block(b, std::move(xb), sb);
            xg = rgb.enter_block(b, std::move(xg), sg);
            const Shape2 shape = fg.block_shape(b);

            BlendConfig bc = blend;
            if (!blend.blends_block(b)) {
                bc.blend_cross_attention = false;
                bc.blend_self_attention = false;
            }

            const std::string self_id = self_layer_id(b);
            BlendStepResult sr = self_attention_blend_step(fg.self_view(b), rgb.self_view(b),
                                                           {xf, xb, xg}, s, bc, self_id, shape);
            if (options.observer) options.observer({step, b, self_id, false, sr});
            xf = add(xf, sr.fg);
            xb = add(xb, sr.blended);
            xg = add(xg, sr.bg);

            const std::string cross_id = cross_layer_id(b);
            BlendStepResult cr =
                cross_attention_blend_step(fg.cross_view(b), rgb.cross_view(b), {xf, xb, xg},
                                           cond_fg, cond_bg, s, bc, cross_id, shape);
            if (options.observer) options.observer({step, b, cross_id, true, cr});
            xf = add(xf, cr.fg);
            xb = add(xb, cr.blended);
            xg = add(xg, cr.bg);
            if (snapshots)
                snapshots->push_back({step, cross_id, std::move(*cr.masks), s,
                                      std::move(*cr.content), std::move(*cr.fg_cross_probs)});

            xf = fg.feed_forward(b, xf);
            xb = rgb.feed_forward(b, xb);
            xg = rgb.feed_forward(b, xg);
        }
        return {fg.head(xf), rgb.head(xb), rgb.head(xg)};
    }
};

}  // namespace detail

inline LayerTriplet generate_triplet(const ToyDenoiser& fg, const ToyDenoiser& rgb,
                                     const Conditioning& cond_fg, const Conditioning& cond_bg,
                                     const SamplerConfig& sampler, const BlendConfig& blend,
                                     const PipelineOptions& options = {}) {
    require_same_geometry(fg, rgb);
    require_conditioning(fg, cond_fg);
    require_conditioning(rgb, cond_bg);
    blend.validate();
    if (options.prior_every == 0) throw ConfigError("prior_every must be >= 1");
    if (options.image_scale == 0) throw ConfigError("image_scale must be >= 1");
    const Schedule sch = make_schedule(sampler);
    const auto& cfg = fg.config();
    const std::string capture =
        options.capture_layer.empty() ? fg.last_self_attention_layer() : options.capture_layer;

    std::vector<std::size_t> record =
        options.snapshot_steps.empty() ? default_snapshot_steps(sch.steps()) : options.snapshot_steps;
    record.push_back(sch.steps() - 1);
    std::sort(record.begin(), record.end());
    record.erase(std::unique(record.begin(), record.end()), record.end());
    for (std::size_t r : record)
        if (r >= sch.steps())
            throw ConfigError("snapshot step " + std::to_string(r) + " beyond " +
                              std::to_string(sch.steps()) + " steps");

    const std::optional<Conditioning> null_cond =
        sampler.guidance_scale > 0.0f
            ? std::optional<Conditioning>(encode_prompt("", cfg.text_len, cfg.model_dim))
            : std::nullopt;

    auto [noise_a, noise_b] = initial_noise(cfg, sampler.seed);
    StreamLatents x{noise_a, noise_a, noise_b};
    for (Tensor* t : {&x.fg, &x.blended, &x.bg})
        for (float& v : t->values()) v *= sch.sigmas[0];

    LayerTriplet out;
    const detail::JointForward joint{fg, rgb, cond_fg, cond_bg, blend, options};
    StructurePrior s;
    CapturedMap last_capture;
    float last_capture_t = 0.0f;

    for (std::size_t i = 0; i < sch.steps(); ++i) {
        const float sigma = sch.sigmas[i];
        const float t = sch.timesteps[i];
        const StreamLatents in{scaled_input(x.fg, sigma), scaled_input(x.blended, sigma),
                               scaled_input(x.bg, sigma)};

        if (i % options.prior_every == 0) {
            s = prior_pass(fg, in.fg, t, cond_fg, capture, &last_capture);
            last_capture_t = t;
        }
        const bool archive = std::binary_search(record.begin(), record.end(), i);
        if (archive) out.structure_captures.push_back({i, last_capture_t, last_capture});

        StreamLatents eps = joint.run(in, t, s, i, archive ? &out.snapshots : nullptr);
        if (null_cond) {
            eps.fg = guided(eps.fg, fg.predict(in.fg, t, *null_cond), sampler.guidance_scale);
            eps.blended =
                guided(eps.blended, rgb.predict(in.blended, t, *null_cond), sampler.guidance_scale);
            eps.bg = guided(eps.bg, rgb.predict(in.bg, t, *null_cond), sampler.guidance_scale);
        }

        euler_update(x.fg, eps.fg, sigma, sch.sigmas[i + 1]);
        euler_update(x.blended, eps.blended, sigma, sch.sigmas[i + 1]);
        euler_update(x.bg, eps.bg, sigma, sch.sigmas[i + 1]);
        check_finite(x.fg, i, Stream::Foreground);
        check_finite(x.blended, i, Stream::Blended);
        check_finite(x.bg, i, Stream::Background);
    }

    const Shape2 image{cfg.latent_size.height * options.image_scale,
                       cfg.latent_size.width * options.image_scale};
    const ToyDecoder decoder(cfg.latent_channels);
    out.final_step = sch.steps() - 1;
    out.alpha_layer = cross_layer_id(fg.block_count() - 1);

    const Image fg_rgb = decoder.decode(x.fg, image);
    const Image alpha = decode_alpha(out, image);
    out.fg_rgba = Image(image.width, image.height, 4);
    for (std::size_t p = 0; p < image.area(); ++p) {
        for (std::size_t k = 0; k < 3; ++k) out.fg_rgba.data[p * 4 + k] = fg_rgb.data[p * 3 + k];
        out.fg_rgba.data[p * 4 + 3] = alpha.data[p];
    }
    out.blended_rgb = decoder.decode(x.blended, image);
    out.bg_rgb = decoder.decode(x.bg, image);
    out.latents = std::move(x);
    return out;
}

/// Mean binarization error over every archived cross-attention mask.
inline double mean_binarization_error(const LayerTriplet& t) {
    if (t.snapshots.empty()) return 0.0;
    double sum = 0.0;
    for (const MaskSnapshot& s : t.snapshots) sum += binarization_error(s.masks);
    return sum / static_cast<double>(t.snapshots.size());
}

/// Fraction of foreground pixels with alpha > 0.5.
inline double alpha_coverage(const LayerTriplet& t) {
    const Image& img = t.fg_rgba;
    std::size_t n = 0;
    for (std::size_t p = 0; p < img.pixel_count(); ++p) n += img.data[p * 4 + 3] > 0.5f;
    return static_cast<double>(n) / static_cast<double>(img.pixel_count());
}

struct AblationRow {
    float d = 0.0f;
    LayerTriplet triplet;
    double mean_binarization_error = 0.0;
    double alpha_coverage = 0.0;
};

/// One generate_triplet run per boundary coefficient, identical seeds
/// otherwise. Runs are spread over up to `threads` workers; each owns its
/// result slot.
inline std::vector<AblationRow> ablate_boundary(std::span<const float> d_values,
                                                const ToyDenoiser& fg, const ToyDenoiser& rgb,
                                                const Conditioning& cond_fg,
                                                const Conditioning& cond_bg,
                                                const SamplerConfig& sampler,
                                                const BlendConfig& base, PipelineOptions options = {},
                                                std::size_t threads = 1) {
    if (d_values.empty()) throw ConfigError("ablation needs at least one d value");
    for (float d : d_values) {
        BlendConfig c = base;
        c.d = d;
        c.validate();
    }
    options.observer = nullptr;
    std::vector<AblationRow> rows(d_values.size());
    auto run_one = [&](std::size_t k) {
        BlendConfig c = base;
        c.d = d_values[k];
        rows[k].d = c.d;
        rows[k].triplet = generate_triplet(fg, rgb, cond_fg, cond_bg, sampler, c, options);
        rows[k].mean_binarization_error = mean_binarization_error(rows[k].triplet);
        rows[k].alpha_coverage = alpha_coverage(rows[k].triplet);
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, d_values.size());
    if (workers == 1) {
        for (std::size_t k = 0; k < rows.size(); ++k) run_one(k);
        return rows;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t k = w; k < rows.size(); k += workers) run_one(k);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return rows;
}

}  // namespace layerfusion::toy
