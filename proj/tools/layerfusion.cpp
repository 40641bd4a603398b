// layerfusion: generate, analyze, ablate, composite.
// Exit codes: 0 ok, 1 usage, 2 data/format, 3 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "layerfusion/app/commands.hpp"

namespace {

namespace app = layerfusion::app;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

void add_generate_flags(CLI::App* cmd, app::GenerateOptions& o) {
    cmd->add_option("--fg-prompt", o.fg_prompt, "Foreground prompt")->capture_default_str();
    cmd->add_option("--bg-prompt", o.bg_prompt, "Background prompt")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Noise seed")->capture_default_str();
    cmd->add_option("--steps", o.steps, "Sampling steps")->capture_default_str();
    cmd->add_option("--d", o.d, "Decision boundary coefficient for the hard mask")->capture_default_str();
    cmd->add_flag("--blend-self", o.blend_self, "Also blend at self-attention layers");
    cmd->add_flag("--no-share", o.no_share, "Disable shared self-attention");
    cmd->add_option("--guidance", o.guidance, "Classifier-free guidance scale (0 = off)")->capture_default_str();
    cmd->add_option("--prior-every", o.prior_every, "Recompute the structure prior every N steps")
        ->capture_default_str();
    cmd->add_option("--fg-weight-seed", o.fg_weight_seed, "Foreground denoiser weight seed")->capture_default_str();
    cmd->add_option("--rgb-weight-seed", o.rgb_weight_seed, "RGB denoiser weight seed")->capture_default_str();
    cmd->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
}

std::pair<float, float> parse_pair(const std::string& flag, const std::string& text) {
    std::istringstream in(text);
    float a = 0.0f, b = 0.0f;
    char comma = 0;
    if (!(in >> a >> comma >> b) || comma != ',' || !(in >> std::ws).eof())
        throw app::UsageError(flag + " expects two comma-separated numbers, got '" + text + "'");
    return {a, b};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Layered image generation by attention blending across three denoising streams"};
    cli.require_subcommand(1);
    cli.failure_message(CLI::FailureMessage::help);

    app::GenerateOptions gen;
    CLI::App* generate = cli.add_subcommand("generate", "Generate a foreground/background/blended triplet");
    add_generate_flags(generate, gen);

    app::AnalyzeOptions ana;
    std::size_t step = 0, eos = 0;
    float ana_d = 0.0f;
    CLI::App* analyze = cli.add_subcommand("analyze", "Extract priors and masks from attention dumps");
    analyze->add_option("--manifest", ana.manifest, "Run manifest")->required();
    analyze->add_option("--layer", ana.layer, "Cross-attention layer (default: last declared)");
    auto* step_opt = analyze->add_option("--step", step, "Capture step (default: closest to 0.8T)");
    auto* eos_opt = analyze->add_option("--eos-index", eos, "EOS token position (default: from manifest)");
    auto* d_opt = analyze->add_option("--d", ana_d, "Decision boundary coefficient (default: from manifest)");
    analyze->add_option("--out-dir", ana.out_dir, "Output directory")->capture_default_str();

    app::AblateOptions abl;
    CLI::App* ablate = cli.add_subcommand("ablate", "Sweep the decision boundary coefficient");
    add_generate_flags(ablate, abl.base);
    ablate->add_option("--d-list", abl.d_values, "Comma-separated d values")->delimiter(',')->capture_default_str();

    app::CompositeOptions comp;
    std::string translate, anchor;
    CLI::App* composite = cli.add_subcommand("composite", "Place a foreground layer over a background");
    composite->add_option("--fg", comp.fg, "Foreground RGBA PAM")->required();
    composite->add_option("--bg", comp.bg, "Background RGB PPM")->required();
    composite->add_option("--translate", translate, "Offset dx,dy in pixels");
    composite->add_option("--scale", comp.scale, "Scale about the anchor")->capture_default_str();
    composite->add_option("--anchor", anchor, "Anchor x,y in foreground pixels (default: center)");
    composite->add_option("--out", comp.out, "Output PPM")->capture_default_str();

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        app::CommandOutput out;
        if (*generate) {
            out = app::run_generate(gen).output;
        } else if (*analyze) {
            if (*step_opt) ana.step = step;
            if (*eos_opt) ana.eos_index = eos;
            if (*d_opt) ana.d = ana_d;
            out = app::run_analyze(ana).output;
        } else if (*ablate) {
            abl.threads = app::threads_from_env();
            out = app::run_ablate(abl).output;
        } else if (*composite) {
            if (!translate.empty()) std::tie(comp.dx, comp.dy) = parse_pair("--translate", translate);
            if (!anchor.empty()) comp.anchor = parse_pair("--anchor", anchor);
            out = app::run_composite(comp);
        }
        std::cout << app::format_report(out);
        return kOk;
    } catch (const app::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const layerfusion::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const layerfusion::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDivergence;
    } catch (const layerfusion::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const layerfusion::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
}
