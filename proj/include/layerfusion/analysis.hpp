// Offline prior/mask extraction from attention dumps referenced by a run
// manifest. The same code path serves toy-pipeline runs and dumps captured
// from external diffusion backends.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "layerfusion/blending.hpp"
#include "layerfusion/io/manifest.hpp"
#include "layerfusion/io/tensor_file.hpp"
#include "layerfusion/priors.hpp"

namespace layerfusion {

/// Row-sum slack accepted for dumped maps; external backends often compute
/// softmax in half precision.
inline constexpr float kDumpRowTolerance = 1e-4f;

struct AnalysisRequest {
    std::string layer;  // cross-attention layer to analyze
    std::size_t step = 0;
    std::optional<std::size_t> eos_index;  // defaults to the manifest's foreground eos
    std::optional<float> d;                // defaults to configs.blend.d, then 10
};

struct AnalysisResult {
    StructurePrior structure;
    ContentPrior content;
    BlendMasks masks;
    std::size_t eos_index = 0;
    float d = 10.0f;
};

inline AnalysisResult analyze_run(const io::RunManifest& m, const std::filesystem::path& base_dir,
                                  const AnalysisRequest& req) {
    const io::LayerEntry* cross = m.find_layer(req.layer);
    if (!cross) throw FormatError("layer '" + req.layer + "' is not declared in the manifest", 0);
    if (cross->kind != "cross")
        throw FormatError("layer '" + req.layer + "' is not a cross-attention layer", 0);
    const io::LayerEntry* self = m.find_layer(m.structure_layer);
    if (!self || self->kind != "self")
        throw FormatError("structure layer '" + m.structure_layer + "' is not a self-attention layer", 0);

    const io::CaptureEntry* cross_cap = m.find_capture(req.layer, req.step);
    if (!cross_cap)
        throw FormatError("no cross-attention dump for '" + req.layer + "' at step " +
                              std::to_string(req.step), 0);
    const io::CaptureEntry* self_cap = m.find_capture(m.structure_layer, req.step);
    if (!self_cap)
        throw FormatError("no self-attention dump for '" + m.structure_layer + "' at step " +
                              std::to_string(req.step), 0);

    const AttnProbMap self_map(io::read_tensor(base_dir / self_cap->file));
    const AttnProbMap cross_map(io::read_tensor(base_dir / cross_cap->file));
    for (const AttnProbMap* map : {&self_map, &cross_map}) {
        try {
            map->validate(kDumpRowTolerance);
        } catch (const ArgumentError& e) {
            throw FormatError(std::string("attention dump: ") + e.what(), 0);
        }
    }
    const Shape2 self_shape{self->height, self->width};
    const Shape2 cross_shape{cross->height, cross->width};

    float train_timesteps = 1000.0f;
    if (m.configs.contains("sampler") && m.configs["sampler"].contains("train_timesteps"))
        train_timesteps = m.configs["sampler"]["train_timesteps"].get<float>();

    AnalysisResult r;
    r.eos_index = req.eos_index.value_or(m.foreground.eos_index);
    r.d = req.d.value_or(m.blend_d().value_or(10.0f));
    r.structure = structure_prior(self_map, self_shape, m.structure_layer,
                                  static_cast<float>(self_cap->timestep_fraction) * train_timesteps);
    r.content = content_prior(cross_map, r.eos_index, cross_shape, req.layer);
    BlendConfig cfg;
    cfg.d = r.d;
    r.masks = make_masks(r.structure, r.content, cfg);
    return r;
}

}  // namespace layerfusion
