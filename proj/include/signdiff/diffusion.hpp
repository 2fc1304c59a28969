#pragma once

// Noise-prediction objective and the ancestral DDPM sampler.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "signdiff/model.hpp"
#include "signdiff/rng.hpp"

namespace signdiff {

/// eps_hat = denoiser(z_t, t, condition, appearance)
using Denoiser = std::function<Tensor(const Tensor&, int, const Tensor&, const Tensor&)>;

inline Denoiser make_denoiser(const Model& m, bool temporal) {
    return [&m, temporal](const Tensor& z, int t, const Tensor& c, const Tensor& app) {
        return predict_noise(m, z, t, c, app, temporal);
    };
}

struct LossItem {
    Tensor z0;
    Tensor condition;
    Tensor appearance;
};

struct NoiseDraw {
    int t = 1;
    Tensor eps;
};

/// Uniform timestep in {1..T} and unit Gaussian noise per item, drawn in order.
inline std::vector<NoiseDraw> draw_noise(std::span<const LossItem> items, const NoiseSchedule& s, Rng& rng) {
    std::vector<NoiseDraw> draws;
    draws.reserve(items.size());
    for (const auto& item : items) {
        NoiseDraw d;
        d.t = static_cast<int>(rng.uniform_int(1, s.steps()));
        d.eps = rng.normal_tensor(item.z0.shape());
        draws.push_back(std::move(d));
    }
    return draws;
}

/// Mean over items of the per-coordinate squared error between drawn and
/// predicted noise.
inline double diffusion_loss(std::span<const LossItem> items, std::span<const NoiseDraw> draws,
                             const Denoiser& denoiser, const NoiseSchedule& s) {
    require(!items.empty(), "diffusion_loss: empty batch");
    require(items.size() == draws.size(), "diffusion_loss: one noise draw per item required");
    double total = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor z_t = q_sample(items[i].z0, draws[i].t, draws[i].eps, s);
        const Tensor eps_hat = denoiser(z_t, draws[i].t, items[i].condition, items[i].appearance);
        total += mean_squared_error(eps_hat, draws[i].eps);
    }
    const double loss = total / static_cast<double>(items.size());
    if (!std::isfinite(loss)) throw NonFiniteError("diffusion_loss: non-finite loss");
    return loss;
}

inline double diffusion_loss(std::span<const LossItem> items, const Denoiser& denoiser, const NoiseSchedule& s,
                             Rng& rng) {
    const auto draws = draw_noise(items, s, rng);
    return diffusion_loss(items, draws, denoiser, s);
}

/// Ancestral sampling from t = T down to 1 with variance beta_t.
inline Tensor ddpm_sample(const Tensor& condition, const Tensor& appearance, const Denoiser& denoiser,
                          const NoiseSchedule& s, std::uint64_t seed, const Shape& latent_shape,
                          const std::function<void(int)>& on_step = {}) {
    Rng rng(seed);
    Tensor z = rng.normal_tensor(latent_shape);
    for (int t = s.steps(); t >= 1; --t) {
        const Tensor eps_hat = denoiser(z, t, condition, appearance);
        z = posterior_mean(z, t, eps_hat, s);
        if (t > 1) {
            const double sigma = std::sqrt(s.beta_at(t));
            for (double& v : z.data()) v += sigma * rng.normal();
        }
        if (!all_finite(z)) throw NonFiniteError("ddpm_sample: non-finite latent at step " + std::to_string(t));
        if (on_step) on_step(t);
    }
    return z;
}

inline Shape latent_shape_for(const Model& m, std::size_t frames) {
    return {m.config.latent_channels(), frames, m.config.latent_size(), m.config.latent_size()};
}

inline Tensor clamp_unit(Tensor x) {
    for (double& v : x.data()) v = std::min(1.0, std::max(0.0, v));
    return x;
}

struct SampleResult {
    Tensor latent;
    Tensor clip;  // decoded and clamped to [0, 1]
};

/// Samples a clip conditioned on the bundle's modalities and reference image.
inline SampleResult sample_clip(const Model& m, const ModalityBundle& b, std::uint64_t seed, bool temporal) {
    const auto cond = condition_forward(m, b);
    SampleResult r;
    r.latent = ddpm_sample(cond.condition, cond.appearance.embedding, make_denoiser(m, temporal), m.schedule, seed,
                           latent_shape_for(m, b.frames()));
    r.clip = clamp_unit(decode_latent(m, r.latent));
    return r;
}

}  // namespace signdiff
