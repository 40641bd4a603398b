// Run manifest: the JSON index of a generation or capture run. Both the toy
// pipeline and external dump adapters write it; the analyzer reads it.
//
// {
//   "format": "layerfusion-run", "version": 1,
//   "producer": "<free text>",
//   "prompts": {
//     "foreground": {"label": "...", "eos_index": 3},
//     "background": {"label": "...", "eos_index": 4}
//   },
//   "structure_layer": "<id of the self-attention layer for the structure prior>",
//   "layers": [{"id": "...", "kind": "self" | "cross", "height": 16, "width": 16}],
//   "captures": [{"step": 4, "timestep_fraction": 0.79, "layer": "...",
//                 "file": "<ATND [H, M, K] relative to the manifest>"}],
//   "snapshots": [{"step": 4, "layer": "...", "structure": "...", "content": "...",
//                  "soft": "...", "hard": "..."}],           (optional)
//   "outputs": {"<name>": "<file>"},                         (optional)
//   "configs": {...}                                         (optional, free-form;
//                                                             configs.blend.d is read)
// }

#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerfusion/errors.hpp"
#include "layerfusion/io/netpbm.hpp"
#include "layerfusion/io/tensor_file.hpp"

namespace layerfusion::io {

inline constexpr const char* kManifestFormat = "layerfusion-run";
inline constexpr int kManifestVersion = 1;

struct PromptEntry {
    std::string label;
    std::size_t eos_index = 0;
};

struct LayerEntry {
    std::string id;
    std::string kind;  // "self" or "cross"
    std::size_t height = 0;
    std::size_t width = 0;
};

struct CaptureEntry {
    std::size_t step = 0;
    double timestep_fraction = 0.0;
    std::string layer;
    std::string file;
};

struct SnapshotEntry {
    std::size_t step = 0;
    std::string layer;
    std::string structure;
    std::string content;
    std::string soft;
    std::string hard;
};

struct RunManifest {
    std::string producer;
    PromptEntry foreground;
    PromptEntry background;
    std::string structure_layer;
    std::vector<LayerEntry> layers;
    std::vector<CaptureEntry> captures;
    std::vector<SnapshotEntry> snapshots;
    std::map<std::string, std::string> outputs;
    nlohmann::ordered_json configs = nlohmann::ordered_json::object();

    const LayerEntry* find_layer(const std::string& id) const {
        for (const LayerEntry& l : layers)
            if (l.id == id) return &l;
        return nullptr;
    }

    const CaptureEntry* find_capture(const std::string& layer, std::size_t step) const {
        for (const CaptureEntry& c : captures)
            if (c.layer == layer && c.step == step) return &c;
        return nullptr;
    }

    const SnapshotEntry* find_snapshot(const std::string& layer, std::size_t step) const {
        for (const SnapshotEntry& s : snapshots)
            if (s.layer == layer && s.step == step) return &s;
        return nullptr;
    }

    std::optional<float> blend_d() const {
        if (configs.contains("blend") && configs["blend"].contains("d"))
            return configs["blend"]["d"].get<float>();
        return std::nullopt;
    }
};

inline nlohmann::ordered_json to_json(const RunManifest& m) {
    using json = nlohmann::ordered_json;
    json j;
    j["format"] = kManifestFormat;
    j["version"] = kManifestVersion;
    j["producer"] = m.producer;
    j["prompts"] = {
        {"foreground", {{"label", m.foreground.label}, {"eos_index", m.foreground.eos_index}}},
        {"background", {{"label", m.background.label}, {"eos_index", m.background.eos_index}}}};
    j["structure_layer"] = m.structure_layer;
    j["layers"] = json::array();
    for (const auto& l : m.layers)
        j["layers"].push_back({{"id", l.id}, {"kind", l.kind}, {"height", l.height}, {"width", l.width}});
    j["captures"] = json::array();
    for (const auto& c : m.captures)
        j["captures"].push_back({{"step", c.step},
                                 {"timestep_fraction", c.timestep_fraction},
                                 {"layer", c.layer},
                                 {"file", c.file}});
    j["snapshots"] = json::array();
    for (const auto& s : m.snapshots)
        j["snapshots"].push_back({{"step", s.step},
                                  {"layer", s.layer},
                                  {"structure", s.structure},
                                  {"content", s.content},
                                  {"soft", s.soft},
                                  {"hard", s.hard}});
    j["outputs"] = json::object();
    for (const auto& [k, v] : m.outputs) j["outputs"][k] = v;
    j["configs"] = m.configs;
    return j;
}

inline RunManifest manifest_from_json(const nlohmann::ordered_json& j) {
    try {
        if (j.at("format").get<std::string>() != kManifestFormat)
            throw FormatError("manifest format is not '" + std::string(kManifestFormat) + "'", 0);
        if (j.at("version").get<int>() != kManifestVersion)
            throw FormatError("unsupported manifest version", 0);
        RunManifest m;
        m.producer = j.value("producer", "");
        auto prompt = [](const nlohmann::ordered_json& p) {
            return PromptEntry{p.value("label", ""), p.at("eos_index").get<std::size_t>()};
        };
        m.foreground = prompt(j.at("prompts").at("foreground"));
        if (j.at("prompts").contains("background")) m.background = prompt(j["prompts"]["background"]);
        m.structure_layer = j.at("structure_layer").get<std::string>();
        for (const auto& l : j.at("layers"))
            m.layers.push_back({l.at("id").get<std::string>(), l.at("kind").get<std::string>(),
                                l.at("height").get<std::size_t>(), l.at("width").get<std::size_t>()});
        for (const auto& c : j.at("captures"))
            m.captures.push_back({c.at("step").get<std::size_t>(),
                                  c.value("timestep_fraction", 0.0), c.at("layer").get<std::string>(),
                                  c.at("file").get<std::string>()});
        if (j.contains("snapshots"))
            for (const auto& s : j["snapshots"])
                m.snapshots.push_back({s.at("step").get<std::size_t>(), s.at("layer").get<std::string>(),
                                       s.at("structure").get<std::string>(),
                                       s.at("content").get<std::string>(), s.at("soft").get<std::string>(),
                                       s.at("hard").get<std::string>()});
        if (j.contains("outputs"))
            for (const auto& [k, v] : j["outputs"].items()) m.outputs[k] = v.get<std::string>();
        if (j.contains("configs")) m.configs = j["configs"];
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid manifest: ") + e.what(), 0);
    }
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest '" + path.string() + "'", 0);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest is not valid JSON: " + std::string(e.what()), e.byte);
    }
    return manifest_from_json(j);
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << to_json(m).dump(2) << "\n";
}

/// Structural checks plus: every layer id is unique, every referenced file
/// exists and parses, and capture tensors agree with their layer geometry.
inline void validate_manifest(const RunManifest& m, const std::filesystem::path& base_dir) {
    std::set<std::string> ids;
    for (const LayerEntry& l : m.layers) {
        if (!ids.insert(l.id).second) throw FormatError("duplicate layer id '" + l.id + "'", 0);
        if (l.kind != "self" && l.kind != "cross")
            throw FormatError("layer '" + l.id + "' has unknown kind '" + l.kind + "'", 0);
        if (l.height == 0 || l.width == 0) throw FormatError("layer '" + l.id + "' has empty grid", 0);
    }
    const LayerEntry* sl = m.find_layer(m.structure_layer);
    if (!sl || sl->kind != "self")
        throw FormatError("structure_layer '" + m.structure_layer + "' is not a declared self-attention layer", 0);

    auto check_file = [&](const std::string& rel) {
        const auto p = base_dir / rel;
        if (!std::filesystem::exists(p)) throw FormatError("dangling file reference '" + rel + "'", 0);
    };
    for (const CaptureEntry& c : m.captures) {
        const LayerEntry* l = m.find_layer(c.layer);
        if (!l) throw FormatError("capture references undeclared layer '" + c.layer + "'", 0);
        check_file(c.file);
        const Tensor t = read_tensor(base_dir / c.file);
        if (t.rank() != 3 || t.dim(1) != l->height * l->width)
            throw FormatError("capture '" + c.file + "' shape " + shape_string(t.dims()) +
                                  " does not match layer grid " + std::to_string(l->height) + "x" +
                                  std::to_string(l->width),
                              0);
        if (l->kind == "self" && t.dim(2) != t.dim(1))
            throw FormatError("self-attention capture '" + c.file + "' is not square", 0);
    }
    for (const SnapshotEntry& s : m.snapshots) {
        if (!m.find_layer(s.layer)) throw FormatError("snapshot references undeclared layer '" + s.layer + "'", 0);
        for (const std::string* f : {&s.structure, &s.content, &s.soft, &s.hard}) {
            check_file(*f);
            read_tensor(base_dir / *f);
        }
    }
    for (const auto& [name, rel] : m.outputs) {
        check_file(rel);
        const auto ext = std::filesystem::path(rel).extension().string();
        if (ext == ".atnd") read_tensor(base_dir / rel);
        else if (ext == ".pgm" || ext == ".ppm" || ext == ".pam") read_image(base_dir / rel);
    }
}

}  // namespace layerfusion::io
