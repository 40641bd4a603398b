// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "layerfusion/analysis.hpp"
#include "layerfusion/app/commands.hpp"
#include "layerfusion/compositing.hpp"
#include "layerfusion/toy/pipeline.hpp"
#include "support.hpp"

using namespace layerfusion;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

struct Criterion {
    const char* name;
    double time_limit_s;  // 0 = none
    std::function<Outcome()> run;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// Reference toy setup: seed 7, FG weights 1, RGB weights 2.
struct Toy {
    toy::ToyDenoiser fg = toy::ToyDenoiser::build([] {
        toy::ToyDenoiserConfig c;
        c.weight_seed = 1;
        return c;
    }());
    toy::ToyDenoiser rgb = toy::ToyDenoiser::build([] {
        toy::ToyDenoiserConfig c;
        c.weight_seed = 2;
        return c;
    }());
    Conditioning cond_fg = toy::encode_prompt("a glass bottle", 8, 32);
    Conditioning cond_bg = toy::encode_prompt("a wooden table", 8, 32);
    toy::SamplerConfig sampler = [] {
        toy::SamplerConfig s;
        s.seed = 7;
        return s;
    }();
};

Outcome prior_math() {
    Outcome o;
    std::mt19937_64 gen(2024);
    double worst_s = 0, worst_v = 0, worst_c = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + gen() % 32, heads = 1 + gen() % 4, t = 1 + gen() % 16;
        const oracle::Map self = lftest::as_float(oracle::random_row_stochastic(gen, heads, m, m));
        const oracle::Map cross = lftest::as_float(oracle::random_row_stochastic(gen, heads, m, t));
        const std::size_t eos = gen() % t;

        const AttnProbMap sm(lftest::to_tensor(self)), cm(lftest::to_tensor(cross));
        const Tensor s = sparsity_scores(sm);
        const StructurePrior sp = structure_prior(sm, {1, m}, "l", 0);
        const ContentPrior cp = content_prior(cm, eos, {1, m}, "l");
        const auto s_ref = oracle::sparsity(self), v_ref = oracle::structure(self), c_ref = oracle::content(cross, eos);
        for (std::size_t i = 0; i < m; ++i) {
            // Scores lie in [1, M]; float32 resolution there is relative.
            worst_s = std::max(worst_s, std::abs(s[i] - s_ref[i]) / s_ref[i]);
            worst_v = std::max(worst_v, std::abs(sp.values[i] - v_ref[i]));
            worst_c = std::max(worst_c, std::abs(cp.values[i] - c_ref[i]));
        }
    }
    o.require(worst_s <= 1e-6, "sparsity relative error " + fmt(worst_s));
    o.require(worst_v <= 1e-6, "structure prior error " + fmt(worst_v));
    o.require(worst_c <= 1e-6, "content prior error " + fmt(worst_c));

    const Tensor rows({1, 4, 4}, {1, 0, 0, 0, .25f, .25f, .25f, .25f, .5f, .5f, 0, 0, .7f, .1f, .1f, .1f});
    const StructurePrior ex = structure_prior(AttnProbMap(rows), {2, 2}, "l", 0);
    const double want[4] = {1, 0, 2.0 / 3.0, 0.6923};
    for (int i = 0; i < 4; ++i)
        o.require(std::abs(ex.values[i] - want[i]) <= 1e-4, "worked example entry " + std::to_string(i));
    o.detail = o.pass ? "200 maps; max errors s(rel) " + fmt(worst_s) + ", structure " + fmt(worst_v) +
                            ", content " + fmt(worst_c)
                      : o.detail;
    return o;
}

Outcome mask_suite() {
    Outcome o;
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<float> u(0, 1);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor soft({64});
        for (float& v : soft.values()) v = u(gen);
        for (float d : {1.0f, 10.0f, 100.0f}) {
            const Tensor hard = hard_mask(soft, d);
            for (std::size_t i = 0; i < 64; ++i)
                worst = std::max(worst, std::abs(hard[i] - oracle::sigmoid(d * (soft[i] - 0.5))));
        }
    }
    o.require(worst <= 1e-6, "hard-mask identity error " + fmt(worst));
    o.require(sigmoid(0.0f) == 0.5f, "sigmoid(0) != 0.5");
    const Tensor ends = hard_mask(Tensor({2}, {0, 1}), 10);
    o.require(std::abs(ends[0] - 0.006693) <= 1e-5 && std::abs(ends[1] - 0.993307) <= 1e-5, "d = 10 endpoints");

    int monotone = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor soft({64});
        for (float& v : soft.values()) {
            do v = u(gen);
            while (v == 0.5f);
        }
        double prev = INFINITY;
        bool ok = true;
        for (float d : {1.0f, 10.0f, 100.0f}) {
            const double e = binarization_error({soft, hard_mask(soft, d), d, {8, 8}});
            ok = ok && e < prev;
            prev = e;
        }
        monotone += ok;
    }
    o.require(monotone == 100, "binarization error not strictly decreasing on " + std::to_string(100 - monotone) + " masks");
    if (o.pass) o.detail = "identity error " + fmt(worst) + "; 100/100 masks strictly decreasing";
    return o;
}

Outcome blending_suite() {
    Outcome o;
    std::mt19937_64 gen(5);
    const Tensor fg = lftest::random_tensor(gen, {64, 32}), bl = lftest::random_tensor(gen, {64, 32});
    auto masks = [](float soft, float hard) {
        return BlendMasks{Tensor::filled({64}, soft), Tensor::filled({64}, hard), 10, {8, 8}};
    };
    o.require(blend_blended(fg, bl, masks(1, 1)) == fg, "soft = 1 endpoint");
    o.require(blend_blended(fg, bl, masks(0, 0)) == bl, "soft = 0 endpoint");
    o.require(blend_foreground(bl, fg, masks(1, 1)) == bl, "hard = 1 endpoint");
    o.require(blend_foreground(bl, fg, masks(0, 0)) == fg, "hard = 0 endpoint");

    std::uniform_real_distribution<float> u(0, 1);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Tensor a = lftest::random_tensor(gen, {1, 8}, -50, 50), b = lftest::random_tensor(gen, {1, 8}, -50, 50);
        const float s = u(gen);
        const BlendMasks m{Tensor({1}, {s}), hard_mask(Tensor({1}, {s}), 10), 10, {1, 1}};
        const Tensor x = blend_blended(a, b, m), y = blend_foreground(x, a, m);
        for (std::size_t j = 0; j < 8; ++j) {
            violations += x[j] < std::min(a[j], b[j]) || x[j] > std::max(a[j], b[j]);
            violations += y[j] < std::min(x[j], a[j]) || y[j] > std::max(x[j], a[j]);
        }
    }
    o.require(violations == 0, std::to_string(violations) + " convexity violations");

    // Shared self-attention with the toy RGB model's weights against a
    // materialized concatenate-then-slice evaluation.
    const Toy toy;
    double worst = 0;
    for (std::size_t b = 0; b < toy.rgb.block_count(); ++b) {
        const AttentionWeights& w = toy.rgb.self_view(b).attn;
        const std::size_t m = toy.rgb.block_shape(b).area(), d = 32;
        const Tensor hb = layer_norm(lftest::random_tensor(gen, {m, d}, -2, 2), toy.rgb.self_view(b).norm);
        const Tensor hl = layer_norm(lftest::random_tensor(gen, {m, d}, -2, 2), toy.rgb.self_view(b).norm);
        const StreamPair p = shared_self_attention(w, hb, hl, true);
        oracle::Vec joint = lftest::to_vec(hb);
        const auto hv = lftest::to_vec(hl);
        joint.insert(joint.end(), hv.begin(), hv.end());
        const auto q = oracle::matmul(joint, lftest::to_vec(w.to_q), 2 * m, d, d);
        const auto k = oracle::matmul(joint, lftest::to_vec(w.to_k), 2 * m, d, d);
        const auto v = oracle::matmul(joint, lftest::to_vec(w.to_v), 2 * m, d, d);
        const auto att = oracle::attention(q, k, v, 2 * m, 2 * m, d, d, w.heads);
        const auto out = oracle::matmul(att.out, lftest::to_vec(w.to_out), 2 * m, d, d);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                worst = std::max(worst, std::abs(p.bg.at(i, j) - (out[i * d + j] + w.out_bias[j])));
                worst = std::max(worst, std::abs(p.blended.at(i, j) - (out[(m + i) * d + j] + w.out_bias[j])));
            }
    }
    o.require(worst <= 1e-6, "shared attention error " + fmt(worst));
    if (o.pass) o.detail = "endpoints bit-exact; 1000 convex samples; shared-attention error " + fmt(worst);
    return o;
}

Outcome non_interference() {
    Outcome o;
    const Toy t;
    BlendConfig off;
    off.blend_cross_attention = false;
    off.blend_self_attention = false;
    off.share_attention = false;
    const toy::LayerTriplet tr = toy::generate_triplet(t.fg, t.rgb, t.cond_fg, t.cond_bg, t.sampler, off);
    const auto [a, b] = toy::initial_noise(t.fg.config(), t.sampler.seed);
    o.require(tr.latents.fg == toy::sample_single(t.fg, t.cond_fg, a, t.sampler), "foreground differs from solo run");
    o.require(tr.latents.blended == toy::sample_single(t.rgb, t.cond_bg, a, t.sampler), "blended differs from solo run");
    o.require(tr.latents.bg == toy::sample_single(t.rgb, t.cond_bg, b, t.sampler), "background differs from solo run");
    if (o.pass) o.detail = "3 streams bit-identical over 20 steps";
    return o;
}

Outcome fg_dominance() {
    Outcome o;
    const Toy t;
    BlendConfig cfg;
    cfg.soft_override = 1.0f;
    toy::PipelineOptions opt;
    float worst = 0;
    std::size_t layers = 0;
    opt.observer = [&](const toy::BlendTrace& tr) {
        if (!tr.cross_attention) return;
        ++layers;
        for (std::size_t i = 0; i < tr.result.fg.size(); ++i)
            worst = std::max(worst, std::abs(tr.result.blended[i] - tr.result.fg[i]));
    };
    toy::generate_triplet(t.fg, t.rgb, t.cond_fg, t.cond_bg, t.sampler, cfg, opt);
    o.require(layers == 20 * t.fg.block_count(), "observed " + std::to_string(layers) + " layer steps");
    o.require(worst <= 1e-6f, "max |blended - fg| " + fmt(worst));
    if (o.pass) o.detail = std::to_string(layers) + " layer-steps, max |blended - fg| " + fmt(worst);
    return o;
}

std::string run_cli(const std::string& args, int& code) {
    FILE* p = popen((std::string(LF_CLI_PATH) + " " + args + " 2>&1").c_str(), "r");
    std::string out;
    if (!p) {
        code = -1;
        return out;
    }
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) out.append(buf.data(), n);
    const int status = pclose(p);
    code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

Outcome determinism_and_formats() {
    Outcome o;
    const auto dir = lftest::scratch_dir("acceptance_generate");
    int c1 = 0, c2 = 0;
    const std::string a = run_cli("generate --seed 7 --out-dir " + (dir / "a").string(), c1);
    const std::string b = run_cli("generate --seed 7 --out-dir " + (dir / "b").string(), c2);
    o.require(c1 == 0 && c2 == 0, "generate failed: " + a.substr(0, 200));
    o.require(!a.empty() && a == b, "checksums differ across runs");
    const std::string checksum = a.substr(a.rfind("checksum "));

    std::mt19937_64 gen(50);
    int exact = 0;
    for (int i = 0; i < 50; ++i) {
        std::vector<std::size_t> dims;
        const std::size_t rank = gen() % 5;
        for (std::size_t r = 0; r < rank; ++r) dims.push_back(1 + gen() % 9);
        Tensor t = lftest::random_tensor(gen, dims, -1e6f, 1e6f);
        io::write_tensor(dir / "t.atnd", t);
        const Tensor back = io::read_tensor(dir / "t.atnd");
        exact += back.dims() == t.dims() && std::memcmp(back.vec().data(), t.vec().data(), 4 * t.size()) == 0;
    }
    o.require(exact == 50, std::to_string(50 - exact) + " ATND round-trips not bit-exact");

    const io::RunManifest m = io::read_manifest(dir / "a/manifest.json");
    io::validate_manifest(m, dir / "a");
    std::size_t matched = 0;
    for (const io::SnapshotEntry& s : m.snapshots) {
        const AnalysisResult r = analyze_run(m, dir / "a", {s.layer, s.step, {}, {}});
        matched += r.structure.values == io::read_tensor(dir / "a" / s.structure) &&
                   r.content.values == io::read_tensor(dir / "a" / s.content) &&
                   r.masks.soft == io::read_tensor(dir / "a" / s.soft) &&
                   r.masks.hard == io::read_tensor(dir / "a" / s.hard);
    }
    o.require(!m.snapshots.empty() && matched == m.snapshots.size(),
              std::to_string(m.snapshots.size() - matched) + " snapshots not reproduced by analyze");
    if (o.pass)
        o.detail = "generate " + checksum.substr(0, checksum.find('\n')) + " stable; 50 ATND round-trips; " +
                   std::to_string(matched) + " snapshots reproduced";
    return o;
}

Outcome compositing_suite() {
    Outcome o;
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<float> u(0, 1);
    Image fg(16, 12, 4), bg(16, 12, 3);
    for (float& v : fg.data) v = u(gen);
    for (float& v : bg.data) v = u(gen);

    Image opaque = fg, clear = fg;
    for (std::size_t p = 0; p < fg.pixel_count(); ++p) {
        opaque.data[p * 4 + 3] = 1;
        clear.data[p * 4 + 3] = 0;
    }
    const Image on = alpha_blend(opaque, bg);
    bool fg_ok = true;
    for (std::size_t p = 0; p < fg.pixel_count(); ++p)
        for (int k = 0; k < 3; ++k) fg_ok = fg_ok && on.data[p * 3 + k] == opaque.data[p * 4 + k];
    o.require(fg_ok, "alpha = 1 does not reproduce foreground");
    o.require(alpha_blend(clear, bg) == bg, "alpha = 0 does not reproduce background");

    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Image img(16, 16, 4);
        for (std::size_t p = 0; p < img.pixel_count(); ++p) {
            for (int k = 0; k < 3; ++k) img.data[p * 4 + k] = u(gen);
            float a;
            do a = u(gen);
            while (a <= kUnpremultiplyEpsilon);
            img.data[p * 4 + 3] = a;
        }
        const Image back = unpremultiply(premultiply(img));
        for (std::size_t i = 0; i < img.data.size(); ++i) worst = std::max(worst, double(std::abs(back.data[i] - img.data[i])));
    }
    o.require(worst <= 1e-6, "premultiply round-trip error " + fmt(worst));

    SpatialEdit identity;
    o.require(apply_edit(fg, identity, 16, 12) == fg, "identity edit not bit-exact");
    SpatialEdit away;
    away.dx = 16;
    o.require(alpha_blend(apply_edit(fg, away, 16, 12), bg) == bg, "off-canvas translate is not pure background");
    if (o.pass) o.detail = "endpoints exact; round-trip error " + fmt(worst) + "; identity and off-canvas exact";
    return o;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"prior-math oracle suite", 5.0, prior_math},
        {"mask suite", 0, mask_suite},
        {"blending-equation suite", 0, blending_suite},
        {"non-interference end-to-end", 30.0, non_interference},
        {"fg-dominance end-to-end", 0, fg_dominance},
        {"determinism and formats", 0, determinism_and_formats},
        {"compositing suite", 0, compositing_suite},
    };
    int failed = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.pass && c.time_limit_s > 0 && secs >= c.time_limit_s) {
            o.pass = false;
            o.detail = "took " + fmt(secs) + " s, limit " + fmt(c.time_limit_s) + " s";
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << fmt(secs) << " s): " << o.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
