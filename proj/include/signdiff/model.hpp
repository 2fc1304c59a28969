#pragma once

// The full conditional model: modality encoders, aggregation, appearance
// encoder and U-Net (trainable), plus the frozen foundation stub, latent
// codec and noise schedule.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "signdiff/bundle.hpp"
#include "signdiff/codec.hpp"
#include "signdiff/encoders.hpp"
#include "signdiff/schedule.hpp"
#include "signdiff/unet.hpp"

namespace signdiff {

/// How the network output F is turned into the noise estimate eps_hat.
/// The training loss is the noise-prediction error in every case.
enum class OutputParameterization {
    epsilon,   // eps_hat = F
    velocity,  // eps_hat = sqrt(1 - abar) z_t + sqrt(abar) F
    sample,    // eps_hat = (z_t - sqrt(abar) F) / sqrt(1 - abar)
};

inline const char* parameterization_name(OutputParameterization p) {
    switch (p) {
        case OutputParameterization::epsilon: return "epsilon";
        case OutputParameterization::velocity: return "velocity";
        case OutputParameterization::sample: return "sample";
    }
    return "?";
}

inline OutputParameterization parse_parameterization(const std::string& s) {
    if (s == "epsilon") return OutputParameterization::epsilon;
    if (s == "velocity") return OutputParameterization::velocity;
    if (s == "sample") return OutputParameterization::sample;
    throw InvalidArgument("unknown output parameterization '" + s + "' (epsilon|velocity|sample)");
}

struct ModelConfig {
    std::size_t image_channels = 3;
    std::size_t image_size = 32;
    std::size_t feature_channels = 8;
    std::size_t patch = 4;
    std::size_t unet_base = 32;
    std::size_t unet_wide = 64;
    std::size_t app_dim = 8;
    std::size_t app_hidden = 8;
    CompositionConfig composition;
    std::uint64_t stub_seed = 17;
    std::uint64_t init_seed = 0;
    int diffusion_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double latent_scale = 1.8;  // brings synthetic latents to roughly unit variance
    OutputParameterization output = OutputParameterization::epsilon;

    std::size_t latent_channels() const { return patch * patch * image_channels; }
    std::size_t latent_size() const { return image_size / patch; }

    UNetConfig unet() const {
        UNetConfig u;
        u.latent_channels = latent_channels();
        u.cond_channels = feature_channels;
        u.app_dim = app_dim;
        u.base = unet_base;
        u.wide = unet_wide;
        return u;
    }

    void validate() const {
        require(image_channels > 0 && feature_channels > 0 && unet_base > 0 && unet_wide > 0 && app_dim > 0 &&
                    app_hidden > 0,
                "model config: channel counts must be positive");
        require(patch == kEncoderStride,
                "model config: codec patch must equal the encoder stride (" + std::to_string(kEncoderStride) +
                    ") so the condition lands on the latent grid");
        require(image_size % 8 == 0 && image_size >= 8, "model config: image size must be a positive multiple of 8");
        require(latent_scale > 0.0 && std::isfinite(latent_scale), "model config: latent_scale must be positive");
        check_composition(composition);
    }
};

struct ModelParams {
    EncoderParams pose;
    EncoderParams hand;
    EncoderParams face;
    AggregationParams agg;
    AppearanceParams app;
    UNetParams unet;
};

template <class P, class F>
void visit_model(P& p, F&& f) {
    auto spatial = [&](const std::string& name, auto& t) { f(name, t, ParamGroup::spatial); };
    visit_conv_layers(p.pose.layers, "enc.pose.", spatial);
    visit_conv_layers(p.hand.layers, "enc.hand.", spatial);
    visit_conv_layers(p.face.layers, "enc.face.", spatial);
    visit_aggregation(p.agg, "agg.", spatial);
    visit_conv_layers(p.app.layers, "enc.app.", spatial);
    visit_unet(p.unet, "unet.", f);
}

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    visit_model(z, [](const std::string&, Tensor& t, ParamGroup) { t.fill(0.0); });
    return z;
}

struct Model {
    ModelConfig config;
    ModelParams params;
    FoundationStub stub;
    LatentCodec codec;
    NoiseSchedule schedule;
};

inline Model make_model(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.init_seed);
    Model m;
    m.config = cfg;
    const std::size_t c = cfg.feature_channels;
    m.params.pose = make_encoder(cfg.image_channels, c, rng);
    m.params.hand = make_encoder(cfg.image_channels, c, rng);
    m.params.face = make_encoder(cfg.image_channels, c, rng);
    m.params.agg = make_aggregation_params(c, rng);
    m.params.app = make_appearance_encoder(cfg.image_channels, cfg.app_hidden, cfg.app_dim, rng);
    m.params.unet = make_unet(cfg.unet(), rng);
    m.stub = FoundationStub(2 * c, c, cfg.stub_seed);
    m.codec = LatentCodec(cfg.image_channels, cfg.patch);
    m.schedule = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
    return m;
}

/// Every tensor in the model, stub included, with its group.
template <class F>
void visit_registry(const Model& m, F&& f) {
    visit_model(m.params, f);
    m.stub.visit("stub.", [&](const std::string& name, const Tensor& t) { f(name, t, ParamGroup::frozen); });
}

struct NamedTensor {
    std::string name;
    Tensor* tensor;
    ParamGroup group;
};

inline std::vector<NamedTensor> flatten(ModelParams& p) {
    std::vector<NamedTensor> out;
    visit_model(p, [&](const std::string& name, Tensor& t, ParamGroup g) { out.push_back({name, &t, g}); });
    return out;
}

// ---------------------------------------------------------------------------
// Noise prediction

/// eps_hat = skip * z_t + out * F.
struct OutputScaling {
    double skip = 0.0;
    double out = 1.0;
};

inline OutputScaling output_scaling(const Model& m, int t) {
    m.schedule.check_step(t);
    const double ab = m.schedule.alpha_bar_at(t);
    switch (m.config.output) {
        case OutputParameterization::epsilon: return {};
        case OutputParameterization::velocity: return {std::sqrt(1.0 - ab), std::sqrt(ab)};
        case OutputParameterization::sample: return {1.0 / std::sqrt(1.0 - ab), -std::sqrt(ab / (1.0 - ab))};
    }
    return {};
}

inline Tensor scale_output(const OutputScaling& s, Tensor f, const Tensor& z_t) {
    if (s.out != 1.0) f *= s.out;
    if (s.skip != 0.0) f.axpy(s.skip, z_t);
    return f;
}

/// Diffusion-space latent of a [0, 1] clip: pixels mapped to [-1, 1], patch
/// codec, then multiplied by latent_scale.
inline Tensor encode_latent(const Model& m, const Tensor& clip) {
    Tensor x = clip;
    for (double& v : x.data()) v = 2.0 * v - 1.0;
    Tensor z = m.codec.encode(x);
    z *= m.config.latent_scale;
    return z;
}

/// Inverse of encode_latent (no clamping).
inline Tensor decode_latent(const Model& m, const Tensor& z) {
    Tensor scaled = z;
    scaled *= 1.0 / m.config.latent_scale;
    Tensor x = m.codec.decode(scaled);
    for (double& v : x.data()) v = 0.5 * (v + 1.0);
    return x;
}

inline Tensor predict_noise(const Model& m, const Tensor& z_t, int t, const Tensor& cond, const Tensor& app,
                            bool temporal) {
    return scale_output(output_scaling(m, t), denoise(m.params.unet, z_t, t, cond, app, temporal), z_t);
}

// ---------------------------------------------------------------------------
// Conditioning path

struct ConditionCache {
    ConvStackCache pose, hand, face;
    Tensor condition;
    AppearanceCache appearance;
};

inline void check_bundle_for_model(const ModelConfig& cfg, const ModalityBundle& b) {
    require_feature(b.target_clip, "bundle");
    if (b.target_clip.dim(0) != cfg.image_channels || b.target_clip.dim(2) != cfg.image_size ||
        b.target_clip.dim(3) != cfg.image_size)
        throw InvalidArgument("bundle clip " + shape_str(b.target_clip.shape()) + " does not match model image " +
                              std::to_string(cfg.image_channels) + "x" + std::to_string(cfg.image_size) + "x" +
                              std::to_string(cfg.image_size));
}

inline ConditionCache condition_forward(const Model& m, const ModalityBundle& b) {
    check_bundle_for_model(m.config, b);
    ConditionCache k;
    k.pose = encode_modality_cached(b.pose_map, m.params.pose);
    k.hand = encode_modality_cached(b.hand_map, m.params.hand);
    k.face = encode_modality_cached(b.face_map, m.params.face);
    k.condition = compose_condition(k.pose.output, k.hand.output, k.face.output, m.stub, m.params.agg,
                                    m.config.composition);
    k.appearance = encode_appearance_cached(b.reference_image, m.params.app);
    return k;
}

inline void accumulate(ModelParams& dst, const ModelParams& src) {
    std::vector<const Tensor*> s;
    visit_model(src, [&](const std::string&, const Tensor& t, ParamGroup) { s.push_back(&t); });
    std::size_t i = 0;
    visit_model(dst, [&](const std::string&, Tensor& t, ParamGroup) { t += *s[i++]; });
}

/// Back-propagates condition/appearance gradients into encoder, aggregation
/// and appearance weights, accumulating into `grads`.
inline void condition_backward(const Model& m, const ConditionCache& k, const Tensor& grad_condition,
                               const Tensor& grad_appearance, ModelParams& grads) {
    auto cg = compose_condition_backward(k.pose.output, k.hand.output, k.face.output, m.stub, m.params.agg,
                                         m.config.composition, grad_condition);
    auto add_layers = [](EncoderParams& dst, const EncoderParams& src) {
        for (std::size_t i = 0; i < dst.layers.size(); ++i) {
            dst.layers[i].kernel += src.layers[i].kernel;
            dst.layers[i].bias += src.layers[i].bias;
        }
    };
    add_layers(grads.pose, encode_modality_backward(k.pose, m.params.pose, cg.pose));
    add_layers(grads.hand, encode_modality_backward(k.hand, m.params.hand, cg.hand));
    add_layers(grads.face, encode_modality_backward(k.face, m.params.face, cg.face));
    std::vector<Tensor*> dst;
    visit_aggregation(grads.agg, "", [&](const std::string&, Tensor& t) { dst.push_back(&t); });
    std::size_t i = 0;
    visit_aggregation(cg.agg, "", [&](const std::string&, const Tensor& t) { *dst[i++] += t; });

    const auto ag = encode_appearance_backward(k.appearance, m.params.app, grad_appearance);
    for (std::size_t l = 0; l < grads.app.layers.size(); ++l) {
        grads.app.layers[l].kernel += ag.layers[l].kernel;
        grads.app.layers[l].bias += ag.layers[l].bias;
    }
}

}  // namespace signdiff
