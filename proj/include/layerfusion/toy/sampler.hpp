// Deterministic Euler sampler over a linear beta schedule (k-diffusion
// parameterization). Step i evaluates the model at timestep t_i with input
// x * c_in(sigma_i), c_in = 1 / sqrt(sigma^2 + 1), and updates
// x <- x + (sigma_{i+1} - sigma_i) * eps.
//
// Timesteps count down: t_0 = T_total - 1, t_{N-1} = 0, evenly spaced, and
// sigma_N = 0. "t = 0.8 T" therefore falls at step ~0.2 N.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "layerfusion/errors.hpp"
#include "layerfusion/tensor.hpp"
#include "layerfusion/toy/rng.hpp"

namespace layerfusion::toy {

struct SamplerConfig {
    std::size_t steps = 20;
    std::size_t train_timesteps = 1000;
    double beta_start = 0.00085;
    double beta_end = 0.012;
    std::uint64_t seed = 0;
    /// <= 0 disables classifier-free guidance (conditional branch only).
    float guidance_scale = 0.0f;

    void validate() const {
        if (steps < 1) throw ConfigError("sampler needs at least one step");
        if (train_timesteps < 2) throw ConfigError("train_timesteps must be >= 2");
        if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0))
            throw ConfigError("beta schedule must satisfy 0 < beta_start <= beta_end < 1");
        if (!(guidance_scale >= 0.0f) || !std::isfinite(guidance_scale))
            throw ConfigError("guidance_scale must be finite and >= 0");
    }
};

struct Schedule {
    std::vector<float> timesteps;  // N entries, descending
    std::vector<float> sigmas;     // N + 1 entries, last is 0
    float train_timesteps = 1000.0f;

    std::size_t steps() const { return timesteps.size(); }

    /// Fraction of the training horizon remaining at step i (t_i / T_total).
    float timestep_fraction(std::size_t step) const { return timesteps.at(step) / train_timesteps; }

    static float input_scale(float sigma) { return 1.0f / std::sqrt(sigma * sigma + 1.0f); }
};

inline Schedule make_schedule(const SamplerConfig& cfg) {
    cfg.validate();
    const std::size_t tt = cfg.train_timesteps;
    std::vector<double> log_sigma(tt);
    double alpha_bar = 1.0;
    for (std::size_t t = 0; t < tt; ++t) {
        const double beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) *
                                                 static_cast<double>(t) /
                                                 static_cast<double>(tt - 1);
        alpha_bar *= 1.0 - beta;
        log_sigma[t] = 0.5 * std::log((1.0 - alpha_bar) / alpha_bar);
    }

    Schedule s;
    s.train_timesteps = static_cast<float>(tt);
    const std::size_t n = cfg.steps;
    const double t_max = static_cast<double>(tt - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n == 1 ? t_max : t_max - t_max * static_cast<double>(i) /
                                                      static_cast<double>(n - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(t));
        const std::size_t hi = std::min(lo + 1, tt - 1);
        const double w = t - static_cast<double>(lo);
        s.timesteps.push_back(static_cast<float>(t));
        s.sigmas.push_back(static_cast<float>(std::exp((1.0 - w) * log_sigma[lo] + w * log_sigma[hi])));
    }
    s.sigmas.push_back(0.0f);
    return s;
}

/// Step index whose timestep fraction is closest to `fraction`.
inline std::size_t step_for_timestep_fraction(const Schedule& s, float fraction) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.steps(); ++i)
        if (std::abs(s.timestep_fraction(i) - fraction) <
            std::abs(s.timestep_fraction(best) - fraction))
            best = i;
    return best;
}

inline Tensor gaussian_latent(SplitMix64& rng, std::vector<std::size_t> dims) {
    Tensor t(std::move(dims));
    for (float& v : t.values()) v = rng.normal();
    return t;
}

/// x <- x + (sigma_next - sigma) * eps
inline void euler_update(Tensor& x, const Tensor& eps, float sigma, float sigma_next) {
    const float dt = sigma_next - sigma;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * eps[i];
}

inline Tensor scaled_input(const Tensor& x, float sigma) {
    Tensor out = x;
    const float c = Schedule::input_scale(sigma);
    for (float& v : out.values()) v *= c;
    return out;
}

/// eps_u + g (eps_c - eps_u)
inline Tensor guided(const Tensor& eps_cond, const Tensor& eps_uncond, float scale) {
    Tensor out = eps_uncond;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * (eps_cond[i] - eps_uncond[i]);
    return out;
}

}  // namespace layerfusion::toy
