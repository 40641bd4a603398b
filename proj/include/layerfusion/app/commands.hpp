// Implementations behind the `layerfusion` command-line subcommands. Each
// command writes its files, returns their checksums, and throws the
// library's error types; the executable maps those onto exit codes.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "layerfusion/analysis.hpp"
#include "layerfusion/compositing.hpp"
#include "layerfusion/io/checksum.hpp"
#include "layerfusion/io/manifest.hpp"
#include "layerfusion/io/netpbm.hpp"
#include "layerfusion/io/tensor_file.hpp"
#include "layerfusion/toy/conditioning.hpp"
#include "layerfusion/toy/pipeline.hpp"

namespace layerfusion::app {

namespace fs = std::filesystem;

/// Invalid flag values (exit code 1).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FileDigest {
    std::string path;  // relative to the command's output directory
    std::uint64_t checksum = 0;
};

struct CommandOutput {
    std::vector<FileDigest> files;
    std::uint64_t checksum = 0;  // over (path, bytes) of every file, sorted by path
};

inline std::uint64_t combined_checksum(std::vector<FileDigest>& files, const fs::path& root) {
    std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const FileDigest& f : files) {
        h = toy::fnv1a64(f.path, h);
        h = toy::fnv1a64(std::string_view("\0", 1), h);
        h = io::checksum_bytes(io::detail::read_file(root / f.path), h);
    }
    return h;
}

inline std::string format_report(const CommandOutput& out) {
    std::string s;
    for (const FileDigest& f : out.files) s += io::hex64(f.checksum) + "  " + f.path + "\n";
    s += "checksum " + io::hex64(out.checksum) + "\n";
    return s;
}

/// Shortest round-trippable decimal for a float (used in names and CSV).
inline std::string format_float(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

struct GenerateOptions {
    std::string fg_prompt = "a glass bottle";
    std::string bg_prompt = "a wooden table";
    std::uint64_t seed = 7;
    std::size_t steps = 20;
    float d = 10.0f;
    bool blend_self = false;
    bool no_share = false;
    float guidance = 0.0f;
    std::size_t prior_every = 1;
    std::uint64_t fg_weight_seed = 1;
    std::uint64_t rgb_weight_seed = 2;
    fs::path out_dir = "out";

    void validate() const {
        if (!(d > 0.0f) || !std::isfinite(d))
            throw UsageError("--d must satisfy d > 0 (got " + format_float(d) + ")");
        if (steps < 1) throw UsageError("--steps must be >= 1");
        if (!(guidance >= 0.0f)) throw UsageError("--guidance must be >= 0");
        if (prior_every < 1) throw UsageError("--prior-every must be >= 1");
    }
};

/// Everything a generation run depends on, resolved from options.
struct GenerationSetup {
    toy::ToyDenoiserConfig fg_cfg;
    toy::ToyDenoiserConfig rgb_cfg;
    toy::SamplerConfig sampler;
    BlendConfig blend;
    toy::PipelineOptions pipeline;
};

inline GenerationSetup make_setup(const GenerateOptions& o) {
    o.validate();
    GenerationSetup s;
    s.fg_cfg.weight_seed = o.fg_weight_seed;
    s.rgb_cfg.weight_seed = o.rgb_weight_seed;
    s.sampler.steps = o.steps;
    s.sampler.seed = o.seed;
    s.sampler.guidance_scale = o.guidance;
    s.blend.d = o.d;
    s.blend.blend_self_attention = o.blend_self;
    s.blend.share_attention = !o.no_share;
    s.pipeline.prior_every = o.prior_every;
    return s;
}

inline nlohmann::ordered_json configs_json(const GenerationSetup& s) {
    auto denoiser = [](const toy::ToyDenoiserConfig& c) {
        return nlohmann::ordered_json{{"latent_channels", c.latent_channels},
                                      {"latent_height", c.latent_size.height},
                                      {"latent_width", c.latent_size.width},
                                      {"model_dim", c.model_dim},
                                      {"heads", c.heads},
                                      {"blocks", c.blocks},
                                      {"text_len", c.text_len},
                                      {"weight_seed", c.weight_seed}};
    };
    return {{"denoiser_fg", denoiser(s.fg_cfg)},
            {"denoiser_rgb", denoiser(s.rgb_cfg)},
            {"sampler",
             {{"steps", s.sampler.steps},
              {"train_timesteps", s.sampler.train_timesteps},
              {"beta_start", s.sampler.beta_start},
              {"beta_end", s.sampler.beta_end},
              {"seed", s.sampler.seed},
              {"guidance_scale", s.sampler.guidance_scale}}},
            {"blend",
             {{"d", s.blend.d},
              {"blend_cross_attention", s.blend.blend_cross_attention},
              {"blend_self_attention", s.blend.blend_self_attention},
              {"share_attention", s.blend.share_attention}}},
            {"pipeline", {{"prior_every", s.pipeline.prior_every}, {"image_scale", s.pipeline.image_scale}}}};
}

inline std::string step_tag(std::size_t step) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "step%03zu", step);
    return buf;
}

inline Image field_image(const Tensor& values, Shape2 shape) {
    Image img(shape.width, shape.height, 1);
    for (std::size_t i = 0; i < values.size(); ++i) img.data[i] = std::clamp(values[i], 0.0f, 1.0f);
    return img;
}

/// Writes the triplet, mask snapshots, raw attention dumps and manifest.
inline CommandOutput write_run(const fs::path& dir, const toy::LayerTriplet& t,
                               const toy::ToyDenoiser& fg_model, const Conditioning& cond_fg,
                               const Conditioning& cond_bg, const GenerationSetup& setup) {
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "dumps");
    CommandOutput out;
    auto record = [&](const std::string& rel) { out.files.push_back({rel, io::checksum_file(dir / rel)}); };
    auto tensor = [&](const std::string& rel, const Tensor& v) {
        io::write_tensor(dir / rel, v);
        record(rel);
    };
    auto image = [&](const std::string& rel, const Image& img, io::ImageFormat f) {
        io::write_image(dir / rel, img, f);
        record(rel);
    };

    image("fg.pam", t.fg_rgba, io::ImageFormat::PAM);
    image("bg.ppm", t.bg_rgb, io::ImageFormat::PPM);
    image("blended.ppm", t.blended_rgb, io::ImageFormat::PPM);

    io::RunManifest m;
    m.producer = "layerfusion toy pipeline";
    m.foreground = {cond_fg.label, cond_fg.eos_index};
    m.background = {cond_bg.label, cond_bg.eos_index};
    m.structure_layer = t.structure_captures.empty() ? fg_model.last_self_attention_layer()
                                                     : t.structure_captures.front().map.layer;
    for (const toy::LayerInfo& l : fg_model.layers())
        m.layers.push_back({l.id, l.self_attention ? "self" : "cross", l.spatial_shape.height,
                            l.spatial_shape.width});
    const float horizon = static_cast<float>(setup.sampler.train_timesteps);

    for (const toy::StructureCapture& c : t.structure_captures) {
        const std::string tag = step_tag(c.step);
        const std::string dump = "dumps/" + tag + "_" + c.map.layer + ".atnd";
        tensor(dump, c.map.probs.probs());
        m.captures.push_back({c.step, c.timestep / horizon, c.map.layer, dump});
    }
    for (const toy::MaskSnapshot& s : t.snapshots) {
        const std::string tag = step_tag(s.step);
        const std::string dump = "dumps/" + tag + "_" + s.layer + ".atnd";
        tensor(dump, s.cross_probs.probs());
        m.captures.push_back({s.step, s.structure.timestep / horizon, s.layer, dump});

        const std::string base = "masks/" + tag + "_" + s.layer;
        const std::string structure = "masks/" + tag + "_structure.atnd";
        if (!fs::exists(dir / structure)) {
            tensor(structure, s.structure.values);
            image("masks/" + tag + "_structure.pgm", field_image(s.structure.values, s.structure.spatial_shape),
                  io::ImageFormat::PGM);
        }
        tensor(base + "_content.atnd", s.content.values);
        tensor(base + "_soft.atnd", s.masks.soft);
        tensor(base + "_hard.atnd", s.masks.hard);
        image(base + "_content.pgm", field_image(s.content.values, s.content.spatial_shape), io::ImageFormat::PGM);
        image(base + "_soft.pgm", field_image(s.masks.soft, s.masks.spatial_shape), io::ImageFormat::PGM);
        image(base + "_hard.pgm", field_image(s.masks.hard, s.masks.spatial_shape), io::ImageFormat::PGM);
        m.snapshots.push_back({s.step, s.layer, structure, base + "_content.atnd", base + "_soft.atnd",
                               base + "_hard.atnd"});
    }
    m.outputs = {{"foreground", "fg.pam"}, {"background", "bg.ppm"}, {"blended", "blended.ppm"}};
    m.configs = configs_json(setup);
    m.configs["alpha_layer"] = t.alpha_layer;
    io::write_manifest(dir / "manifest.json", m);
    record("manifest.json");

    out.checksum = combined_checksum(out.files, dir);
    return out;
}

struct Models {
    toy::ToyDenoiser fg;
    toy::ToyDenoiser rgb;
    Conditioning cond_fg;
    Conditioning cond_bg;
};

inline Models make_models(const GenerateOptions& o, const GenerationSetup& s) {
    auto fg = toy::ToyDenoiser::build(s.fg_cfg);
    auto rgb = toy::ToyDenoiser::build(s.rgb_cfg);
    auto cf = toy::encode_prompt(o.fg_prompt, s.fg_cfg.text_len, s.fg_cfg.model_dim);
    auto cb = toy::encode_prompt(o.bg_prompt, s.rgb_cfg.text_len, s.rgb_cfg.model_dim);
    return {std::move(fg), std::move(rgb), std::move(cf), std::move(cb)};
}

struct GenerateResult {
    toy::LayerTriplet triplet;
    CommandOutput output;
};

inline GenerateResult run_generate(const GenerateOptions& o) {
    const GenerationSetup setup = make_setup(o);
    const Models models = make_models(o, setup);
    toy::LayerTriplet t = toy::generate_triplet(models.fg, models.rgb, models.cond_fg, models.cond_bg,
                                                setup.sampler, setup.blend, setup.pipeline);
    CommandOutput out = write_run(o.out_dir, t, models.fg, models.cond_fg, models.cond_bg, setup);
    return {std::move(t), std::move(out)};
}

struct AnalyzeOptions {
    fs::path manifest;
    std::string layer;
    std::optional<std::size_t> step;  // defaults to the step closest to t = 0.8 T
    std::optional<std::size_t> eos_index;
    std::optional<float> d;
    fs::path out_dir = "analysis";
};

/// Capture step whose timestep fraction is closest to `fraction`.
inline std::optional<std::size_t> step_near_fraction(const io::RunManifest& m, const std::string& layer,
                                                     double fraction) {
    std::optional<std::size_t> best;
    double gap = 0.0;
    for (const io::CaptureEntry& c : m.captures) {
        if (c.layer != layer) continue;
        const double g = std::abs(c.timestep_fraction - fraction);
        if (!best || g < gap) {
            best = c.step;
            gap = g;
        }
    }
    return best;
}

struct AnalyzeResult {
    AnalysisResult analysis;
    CommandOutput output;
};

inline AnalyzeResult run_analyze(const AnalyzeOptions& o) {
    if (o.d && !(*o.d > 0.0f)) throw UsageError("--d must satisfy d > 0");
    const io::RunManifest m = io::read_manifest(o.manifest);
    const fs::path base = o.manifest.parent_path();
    io::validate_manifest(m, base);

    std::string layer = o.layer;
    if (layer.empty()) {
        for (auto it = m.layers.rbegin(); it != m.layers.rend(); ++it)
            if (it->kind == "cross") {
                layer = it->id;
                break;
            }
    }
    std::optional<std::size_t> step = o.step ? o.step : step_near_fraction(m, layer, 0.8);
    if (!step) throw FormatError("no captures for layer '" + layer + "'", 0);

    if (const io::CaptureEntry* c = m.find_capture(layer, *step); c && o.eos_index) {
        const Tensor probe = io::read_tensor(base / c->file);
        if (*o.eos_index >= probe.dim(2))
            throw UsageError("--eos-index " + std::to_string(*o.eos_index) + " out of range (layer '" + layer +
                             "' has " + std::to_string(probe.dim(2)) + " conditioning tokens)");
    }

    AnalysisRequest req{layer, *step, o.eos_index, o.d};
    AnalysisResult r = analyze_run(m, base, req);

    fs::create_directories(o.out_dir);
    CommandOutput out;
    auto emit = [&](const std::string& name, const Tensor& v, Shape2 shape) {
        io::write_tensor(o.out_dir / (name + ".atnd"), v);
        io::write_image(o.out_dir / (name + ".pgm"), field_image(v, shape), io::ImageFormat::PGM);
        for (const std::string ext : {".atnd", ".pgm"})
            out.files.push_back({name + ext, io::checksum_file(o.out_dir / (name + ext))});
    };
    emit("structure", r.structure.values, r.structure.spatial_shape);
    emit("content", r.content.values, r.content.spatial_shape);
    emit("soft", r.masks.soft, r.masks.spatial_shape);
    emit("hard", r.masks.hard, r.masks.spatial_shape);
    out.checksum = combined_checksum(out.files, o.out_dir);
    return {std::move(r), std::move(out)};
}

struct AblateOptions {
    GenerateOptions base;
    std::vector<float> d_values{1.0f, 10.0f, 100.0f};
    std::size_t threads = 1;
};

/// Worker count from LAYERFUSION_THREADS (default 1).
inline std::size_t threads_from_env() {
    const char* v = std::getenv("LAYERFUSION_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const unsigned long n = std::strtoul(v, &end, 10);
    if (*end != '\0' || n == 0) throw UsageError("LAYERFUSION_THREADS must be a positive integer");
    return n;
}

struct AblateResult {
    std::vector<toy::AblationRow> rows;
    std::string csv;
    CommandOutput output;
};

/// CSV columns: d,mean_binarization_error,alpha_coverage
inline std::string ablation_csv(const std::vector<toy::AblationRow>& rows) {
    std::string csv = "d,mean_binarization_error,alpha_coverage\n";
    for (const auto& r : rows)
        csv += format_float(r.d) + "," + format_float(r.mean_binarization_error) + "," +
               format_float(r.alpha_coverage) + "\n";
    return csv;
}

inline AblateResult run_ablate(const AblateOptions& o) {
    if (o.d_values.empty()) throw UsageError("--d-list must name at least one value");
    for (float d : o.d_values)
        if (!(d > 0.0f) || !std::isfinite(d))
            throw UsageError("--d-list values must satisfy d > 0 (got " + format_float(d) + ")");
    const GenerationSetup setup = make_setup(o.base);
    const Models models = make_models(o.base, setup);
    std::vector<toy::AblationRow> rows =
        toy::ablate_boundary(o.d_values, models.fg, models.rgb, models.cond_fg, models.cond_bg,
                             setup.sampler, setup.blend, setup.pipeline, o.threads);

    AblateResult result;
    fs::create_directories(o.base.out_dir);
    for (const auto& r : rows) {
        GenerationSetup s = setup;
        s.blend.d = r.d;
        const std::string sub = "d_" + format_float(r.d);
        CommandOutput run = write_run(o.base.out_dir / sub, r.triplet, models.fg, models.cond_fg,
                                      models.cond_bg, s);
        for (auto& f : run.files) result.output.files.push_back({sub + "/" + f.path, f.checksum});
    }
    result.csv = ablation_csv(rows);
    {
        std::ofstream csv(o.base.out_dir / "report.csv", std::ios::binary | std::ios::trunc);
        csv << result.csv;
    }
    result.output.files.push_back({"report.csv", io::checksum_file(o.base.out_dir / "report.csv")});
    result.output.checksum = combined_checksum(result.output.files, o.base.out_dir);
    result.rows = std::move(rows);
    return result;
}

struct CompositeOptions {
    fs::path fg;
    fs::path bg;
    float dx = 0.0f;
    float dy = 0.0f;
    float scale = 1.0f;
    std::optional<std::pair<float, float>> anchor;  // defaults to the foreground center
    fs::path out = "composite.ppm";
};

inline CommandOutput run_composite(const CompositeOptions& o) {
    if (!(o.scale > 0.0f) || !std::isfinite(o.scale))
        throw UsageError("--scale must be > 0 (got " + format_float(o.scale) + ")");
    const Image fg = io::read_image(o.fg);
    const Image bg = io::read_image(o.bg);
    if (fg.channels != 4) throw FormatError("--fg must be an RGBA PAM image", 0);
    if (bg.channels != 3) throw FormatError("--bg must be an RGB PPM image", 0);

    SpatialEdit edit;
    edit.dx = o.dx;
    edit.dy = o.dy;
    edit.scale = o.scale;
    edit.anchor_x = o.anchor ? o.anchor->first : static_cast<float>(fg.width) / 2.0f;
    edit.anchor_y = o.anchor ? o.anchor->second : static_cast<float>(fg.height) / 2.0f;
    const Image placed = apply_edit(fg, edit, bg.width, bg.height);
    const Image out = alpha_blend(placed, bg);
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    io::write_image(o.out, out, io::ImageFormat::PPM);

    CommandOutput r;
    r.files.push_back({o.out.filename().string(), io::checksum_file(o.out)});
    r.checksum = combined_checksum(r.files, o.out.has_parent_path() ? o.out.parent_path() : fs::path("."));
    return r;
}

}  // namespace layerfusion::app
