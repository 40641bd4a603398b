#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "layerfusion/io/checksum.hpp"
#include "layerfusion/io/netpbm.hpp"
#include "layerfusion/toy/conditioning.hpp"
#include "layerfusion/toy/pipeline.hpp"
#include "support.hpp"

using namespace layerfusion;
using namespace layerfusion::toy;

namespace {

// Reference run: seed 7, FG weights 1, RGB weights 2, default configs.
struct Reference {
    ToyDenoiserConfig fg_cfg = [] {
        ToyDenoiserConfig c;
        c.weight_seed = 1;
        return c;
    }();
    ToyDenoiserConfig rgb_cfg = [] {
        ToyDenoiserConfig c;
        c.weight_seed = 2;
        return c;
    }();
    ToyDenoiser fg = ToyDenoiser::build(fg_cfg);
    ToyDenoiser rgb = ToyDenoiser::build(rgb_cfg);
    Conditioning cond_fg = encode_prompt("a glass bottle", 8, 32);
    Conditioning cond_bg = encode_prompt("a wooden table", 8, 32);
    SamplerConfig sampler = [] {
        SamplerConfig s;
        s.seed = 7;
        return s;
    }();
};

const Reference& ref() {
    static const Reference r;
    return r;
}

std::string triplet_digest(const LayerTriplet& t) {
    std::ostringstream os;
    os << "fg.pam " << io::hex64(io::checksum_bytes(io::encode_image(t.fg_rgba, io::ImageFormat::PAM))) << "\n"
       << "bg.ppm " << io::hex64(io::checksum_bytes(io::encode_image(t.bg_rgb, io::ImageFormat::PPM))) << "\n"
       << "blended.ppm "
       << io::hex64(io::checksum_bytes(io::encode_image(t.blended_rgb, io::ImageFormat::PPM))) << "\n";
    return os.str();
}

}  // namespace

TEST(Pipeline, DefaultSnapshotSteps) {
    EXPECT_EQ(default_snapshot_steps(20), (std::vector<std::size_t>{4, 10, 16}));
    EXPECT_EQ(default_snapshot_steps(1), (std::vector<std::size_t>{0}));
}

TEST(Pipeline, NonInterferenceWhenEverythingDisabled) {
    const Reference& r = ref();
    BlendConfig off;
    off.blend_cross_attention = false;
    off.blend_self_attention = false;
    off.share_attention = false;
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, off);
    const auto [a, b] = initial_noise(r.fg_cfg, r.sampler.seed);
    EXPECT_EQ(t.latents.fg, sample_single(r.fg, r.cond_fg, a, r.sampler));
    EXPECT_EQ(t.latents.blended, sample_single(r.rgb, r.cond_bg, a, r.sampler));
    EXPECT_EQ(t.latents.bg, sample_single(r.rgb, r.cond_bg, b, r.sampler));
}

TEST(Pipeline, NonInterferenceWithGuidance) {
    const Reference& r = ref();
    BlendConfig off;
    off.blend_cross_attention = false;
    off.share_attention = false;
    SamplerConfig s = r.sampler;
    s.steps = 6;
    s.guidance_scale = 3.0f;
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, off);
    const auto [a, b] = initial_noise(r.fg_cfg, s.seed);
    EXPECT_EQ(t.latents.fg, sample_single(r.fg, r.cond_fg, a, s));
    EXPECT_EQ(t.latents.bg, sample_single(r.rgb, r.cond_bg, b, s));
}

TEST(Pipeline, SharingAloneLeavesForegroundUntouched) {
    const Reference& r = ref();
    BlendConfig share_only;
    share_only.blend_cross_attention = false;
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, share_only);
    const auto [a, b] = initial_noise(r.fg_cfg, r.sampler.seed);
    EXPECT_EQ(t.latents.fg, sample_single(r.fg, r.cond_fg, a, r.sampler));
    EXPECT_NE(t.latents.bg, sample_single(r.rgb, r.cond_bg, b, r.sampler));
}

TEST(Pipeline, SoftOneMakesBlendedCrossEqualForeground) {
    const Reference& r = ref();
    BlendConfig cfg;
    cfg.soft_override = 1.0f;
    PipelineOptions opt;
    std::size_t checked = 0;
    float worst = 0.0f;
    opt.observer = [&](const BlendTrace& tr) {
        if (!tr.cross_attention) return;
        ++checked;
        for (std::size_t i = 0; i < tr.result.fg.size(); ++i)
            worst = std::max(worst, std::abs(tr.result.blended[i] - tr.result.fg[i]));
    };
    SamplerConfig s = r.sampler;
    s.steps = 8;
    generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, cfg, opt);
    EXPECT_EQ(checked, 8u * 3u);
    EXPECT_LE(worst, 1e-6f);
}

TEST(Pipeline, DeterministicAcrossRuns) {
    const Reference& r = ref();
    SamplerConfig s = r.sampler;
    s.steps = 5;
    const LayerTriplet a = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, {});
    const LayerTriplet b = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, {});
    EXPECT_EQ(a.fg_rgba, b.fg_rgba);
    EXPECT_EQ(a.bg_rgb, b.bg_rgb);
    EXPECT_EQ(a.blended_rgb, b.blended_rgb);
    ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
    for (std::size_t i = 0; i < a.snapshots.size(); ++i) EXPECT_EQ(a.snapshots[i].masks.soft, b.snapshots[i].masks.soft);
}

TEST(Pipeline, SnapshotsCoverRequestedAndFinalSteps) {
    const Reference& r = ref();
    SamplerConfig s = r.sampler;
    s.steps = 6;
    PipelineOptions opt;
    opt.snapshot_steps = {2};
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, {}, opt);
    ASSERT_EQ(t.snapshots.size(), 2u * 3u);
    EXPECT_EQ(t.snapshots.front().step, 2u);
    EXPECT_EQ(t.snapshots.back().step, 5u);
    EXPECT_EQ(t.final_step, 5u);
    EXPECT_EQ(t.alpha_layer, "block.2.attn2");
    EXPECT_EQ(t.structure_captures.size(), 2u);
    EXPECT_EQ(t.fg_rgba.width, 64u);
    EXPECT_EQ(t.fg_rgba.channels, 4u);

    opt.snapshot_steps = {6};
    EXPECT_THROW(generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, {}, opt), ConfigError);
}

TEST(Pipeline, PriorCadence) {
    const Reference& r = ref();
    SamplerConfig s = r.sampler;
    s.steps = 6;
    PipelineOptions opt;
    opt.prior_every = 4;
    opt.snapshot_steps = {0, 1, 2, 3, 4};
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, {}, opt);
    const auto& caps = t.structure_captures;
    ASSERT_EQ(caps.size(), 6u);
    EXPECT_EQ(caps[1].timestep, caps[0].timestep);
    EXPECT_EQ(caps[3].map.probs, caps[0].map.probs);
    EXPECT_NE(caps[4].timestep, caps[0].timestep);
}

TEST(Pipeline, MismatchedModelsRejected) {
    const Reference& r = ref();
    ToyDenoiserConfig c;
    c.model_dim = 16;
    const auto small = ToyDenoiser::build(c);
    EXPECT_THROW(generate_triplet(r.fg, small, r.cond_fg, r.cond_bg, r.sampler, {}), ConfigError);
    BlendConfig bad;
    bad.d = 0;
    EXPECT_THROW(generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, bad), ConfigError);
}

TEST(Pipeline, NonFiniteLatentIsDivergence) {
    const Reference& r = ref();
    SamplerConfig s = r.sampler;
    s.beta_end = 0.999999;  // sigma_max explodes past float range
    s.beta_start = 0.9;
    s.steps = 3;
    try {
        generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, s, {});
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.stream(), "foreground");
    }
}

TEST(DecodeAlpha, ConstantMasks) {
    BlendMasks ones{Tensor::filled({4}, 1.0f), Tensor::filled({4}, 1.0f), 10, {2, 2}};
    for (float v : decode_alpha(ones, {8, 8}).data) EXPECT_EQ(v, 1.0f);
    const float low = sigmoid(-5.0f);
    BlendMasks zero{Tensor({4}), Tensor::filled({4}, low), 10, {2, 2}};
    for (float v : decode_alpha(zero, {8, 8}).data) EXPECT_NEAR(v, 0.006693, 1e-6);
}

TEST(DecodeAlpha, CheckerRamp) {
    BlendMasks m{Tensor({4}), Tensor({4}, {0, 1, 1, 0}), 10, {2, 2}};
    const Image a = decode_alpha(m, {4, 4});
    const auto want = oracle::resize({0, 1, 1, 0}, 2, 2, 4, 4);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(a.data[i], want[i], 1e-6);
    EXPECT_NEAR(a.data[1], 1.0 / 3.0, 1e-6);
}

TEST(DecodeAlpha, MissingSnapshotIsConfigError) {
    LayerTriplet t;
    t.final_step = 3;
    t.alpha_layer = "x";
    EXPECT_THROW(decode_alpha(t, {4, 4}), ConfigError);
}

TEST(Ablation, OrderingAndDefaultEquivalence) {
    const Reference& r = ref();
    const std::vector<float> ds{1.0f, 10.0f, 100.0f};
    const auto rows = ablate_boundary(ds, r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {}, {}, 3);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_GT(rows[0].mean_binarization_error, rows[1].mean_binarization_error);
    EXPECT_GT(rows[1].mean_binarization_error, rows[2].mean_binarization_error);
    const LayerTriplet def = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {});
    EXPECT_EQ(rows[1].triplet.fg_rgba, def.fg_rgba);
    EXPECT_EQ(rows[1].triplet.blended_rgb, def.blended_rgb);
    EXPECT_EQ(rows[1].triplet.bg_rgb, def.bg_rgb);

    const std::vector<float> one{10.0f};
    EXPECT_EQ(ablate_boundary(one, r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {}).size(), 1u);
    const std::vector<float> bad{1.0f, 0.0f};
    EXPECT_THROW(ablate_boundary(bad, r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {}), ConfigError);
}

// Frozen outputs of the reference run.
TEST(Golden, StructurePriorAtStep4) {
    const Reference& r = ref();
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {});
    const MaskSnapshot& snap = find_snapshot(t.snapshots, 4, "block.2.attn2");
    EXPECT_NEAR(snap.structure.timestep / 1000.0f, 0.8f, 0.02f);
    EXPECT_EQ(snap.structure.values, lftest::golden_tensor("prior_seed7_step4.atnd", snap.structure.values));
}

TEST(Golden, BlendOutputsAtStep4Block2) {
    const Reference& r = ref();
    PipelineOptions opt;
    Tensor captured({1});
    opt.observer = [&](const BlendTrace& tr) {
        if (tr.step != 4 || tr.block != 2 || !tr.cross_attention) return;
        const std::size_t m = tr.result.fg.dim(0), d = tr.result.fg.dim(1);
        captured = Tensor({3, m, d});
        std::copy_n(tr.result.fg.vec().begin(), m * d, captured.values().begin());
        std::copy_n(tr.result.blended.vec().begin(), m * d, captured.values().begin() + m * d);
        std::copy_n(tr.result.bg.vec().begin(), m * d, captured.values().begin() + 2 * m * d);
    };
    generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {}, opt);
    ASSERT_EQ(captured.rank(), 3u);
    EXPECT_EQ(captured, lftest::golden_tensor("blend_seed7_step4_block2.atnd", captured));
}

TEST(Golden, TripletChecksums) {
    const Reference& r = ref();
    const LayerTriplet t = generate_triplet(r.fg, r.rgb, r.cond_fg, r.cond_bg, r.sampler, {});
    const std::string digest = triplet_digest(t);
    const auto path = lftest::golden_path("triplet_seed7.txt");
    if (lftest::updating_goldens()) std::ofstream(path) << digest;
    std::ifstream in(path);
    ASSERT_TRUE(in) << "missing golden " << path;
    std::stringstream want;
    want << in.rdbuf();
    EXPECT_EQ(digest, want.str());
}
