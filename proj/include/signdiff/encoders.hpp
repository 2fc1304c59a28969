#pragma once

// Per-modality encoders, the appearance encoder for the reference image, the
// frozen foundation-feature stand-in, and the conditioning sum
//   c = f_pose + f_hand + f_face + sapien(f_hand, f_face) + lambda * motion(...)

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "signdiff/aggregation.hpp"

namespace signdiff {

// ---------------------------------------------------------------------------
// Stack of per-frame 3x3 convs with ReLU between layers (none after the last).

struct ConvStackCache {
    std::vector<Tensor> inputs;  // input to each layer
    std::vector<Tensor> pre;     // pre-activation of each non-final layer
    Tensor output;
};

inline ConvStackCache conv_stack_forward(const Tensor& x, std::span<const ConvParams> layers,
                                         std::span<const int> strides) {
    ConvStackCache cache;
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        cache.inputs.push_back(h);
        Tensor y = conv_forward(h, layers[i].kernel, layers[i].bias, spatial_geometry(strides[i]));
        if (i + 1 < layers.size()) {
            cache.pre.push_back(y);
            h = relu(y);
        } else {
            h = std::move(y);
        }
    }
    cache.output = std::move(h);
    return cache;
}

// Fills `grads` (same length as layers); returns the input gradient when asked.
inline Tensor conv_stack_backward(const ConvStackCache& cache, std::span<const ConvParams> layers,
                                  std::span<const int> strides, Tensor grad, std::span<ConvParams> grads,
                                  bool need_input_grad) {
    for (std::size_t i = layers.size(); i-- > 0;) {
        if (i + 1 < layers.size()) grad = relu_backward(cache.pre[i], grad);
        const bool want_input = i > 0 || need_input_grad;
        auto g = conv_backward(cache.inputs[i], layers[i].kernel, spatial_geometry(strides[i]), grad, want_input);
        grads[i].kernel = std::move(g.kernel);
        grads[i].bias = std::move(g.bias);
        grad = want_input ? std::move(g.input) : Tensor();
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Modality encoders: 3 layers, strides (2, 2, 1), total spatial stride 4.

inline constexpr std::array<int, 3> kEncoderStrides{2, 2, 1};
inline constexpr std::size_t kEncoderStride = 4;

struct EncoderParams {
    std::array<ConvParams, 3> layers;
};

inline EncoderParams make_encoder(std::size_t in_channels, std::size_t channels, Rng& rng) {
    EncoderParams p;
    p.layers[0] = make_conv(channels, in_channels, 1, 3, 3, rng);
    p.layers[1] = make_conv(channels, channels, 1, 3, 3, rng);
    p.layers[2] = make_conv(channels, channels, 1, 3, 3, rng);
    return p;
}

template <class P, class F>
void visit_conv_layers(P& layers, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        f(prefix + "l" + std::to_string(i) + ".kernel", layers[i].kernel);
        f(prefix + "l" + std::to_string(i) + ".bias", layers[i].bias);
    }
}

inline void check_encoder_input(const Tensor& map, std::size_t stride, const char* what) {
    require_feature(map, what);
    if (map.dim(2) % stride != 0 || map.dim(3) % stride != 0)
        throw InvalidArgument(std::string(what) + ": spatial extents " + std::to_string(map.dim(2)) + "x" +
                              std::to_string(map.dim(3)) + " not divisible by stride " + std::to_string(stride));
}

inline ConvStackCache encode_modality_cached(const Tensor& map, const EncoderParams& p) {
    check_encoder_input(map, kEncoderStride, "encode_modality");
    return conv_stack_forward(map, p.layers, kEncoderStrides);
}

/// (c_img, t, H, W) -> (c, t, H/4, W/4).
inline Tensor encode_modality(const Tensor& map, const EncoderParams& p) {
    return require_finite(encode_modality_cached(map, p).output, "encode_modality");
}

inline EncoderParams encode_modality_backward(const ConvStackCache& cache, const EncoderParams& p, const Tensor& grad) {
    EncoderParams g;
    conv_stack_backward(cache, p.layers, kEncoderStrides, grad, g.layers, false);
    return g;
}

// ---------------------------------------------------------------------------
// Appearance encoder: strides (2, 2, 2) then a global mean to a vector.

inline constexpr std::array<int, 3> kAppearanceStrides{2, 2, 2};

struct AppearanceParams {
    std::array<ConvParams, 3> layers;
    std::size_t dim() const { return layers[2].kernel.dim(0); }
};

inline AppearanceParams make_appearance_encoder(std::size_t in_channels, std::size_t hidden, std::size_t dim,
                                                Rng& rng) {
    AppearanceParams p;
    p.layers[0] = make_conv(hidden, in_channels, 1, 3, 3, rng);
    p.layers[1] = make_conv(hidden, hidden, 1, 3, 3, rng);
    p.layers[2] = make_conv(dim, hidden, 1, 3, 3, rng);
    return p;
}

struct AppearanceCache {
    ConvStackCache stack;
    Tensor embedding;
};

inline AppearanceCache encode_appearance_cached(const Tensor& reference, const AppearanceParams& p) {
    const Tensor x = as_clip(reference);
    check_encoder_input(x, 8, "encode_appearance");
    for (double v : x.data())
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("encode_appearance: reference pixels must lie in [0, 1]");
    AppearanceCache cache{conv_stack_forward(x, p.layers, kAppearanceStrides), {}};
    cache.embedding = global_mean(cache.stack.output);
    return cache;
}

/// Reference image (c_img, H, W) -> embedding of length dim().
inline Tensor encode_appearance(const Tensor& reference, const AppearanceParams& p) {
    return require_finite(encode_appearance_cached(reference, p).embedding, "encode_appearance");
}

inline AppearanceParams encode_appearance_backward(const AppearanceCache& cache, const AppearanceParams& p,
                                                   const Tensor& grad_embedding) {
    AppearanceParams g;
    const Tensor grad = global_mean_backward(grad_embedding, cache.stack.output.shape());
    conv_stack_backward(cache.stack, p.layers, kAppearanceStrides, grad, g.layers, false);
    return g;
}

// ---------------------------------------------------------------------------

/// Frozen random-filter feature extractor standing in for a pretrained
/// foundation model. Weights are fixed at construction from the seed and are
/// never exposed mutably; only input gradients pass through.
class FoundationStub {
public:
    FoundationStub() = default;

    FoundationStub(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed, std::size_t hidden = 0)
        : seed_(seed) {
        if (hidden == 0) hidden = out_channels;
        Rng rng(seed);
        layers_[0] = make_conv(hidden, in_channels, 1, 3, 3, rng);
        layers_[1] = make_conv(out_channels, hidden, 1, 3, 3, rng);
        for (auto& l : layers_) l.bias = rng.uniform_tensor(l.bias.shape(), -0.1, 0.1);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t in_channels() const { return layers_[0].kernel.dim(1); }
    std::size_t out_channels() const { return layers_[1].kernel.dim(0); }

    Tensor features(const Tensor& x) const { return forward(x).output; }

    ConvStackCache forward(const Tensor& x) const {
        require_feature(x, "FoundationStub");
        require(x.dim(0) == in_channels(), "FoundationStub: expected " + std::to_string(in_channels()) +
                                               " input channels, got " + std::to_string(x.dim(0)));
        return conv_stack_forward(x, layers_, kStrides);
    }

    Tensor backward_input(const ConvStackCache& cache, const Tensor& grad) const {
        std::array<ConvParams, 2> discard;
        return conv_stack_backward(cache, layers_, kStrides, grad, discard, true);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) const {
        visit_conv_layers(layers_, prefix, f);
    }

    friend bool operator==(const FoundationStub& a, const FoundationStub& b) {
        return a.seed_ == b.seed_ && a.layers_[0].kernel == b.layers_[0].kernel &&
               a.layers_[0].bias == b.layers_[0].bias && a.layers_[1].kernel == b.layers_[1].kernel &&
               a.layers_[1].bias == b.layers_[1].bias;
    }

private:
    static constexpr std::array<int, 2> kStrides{1, 1};
    std::uint64_t seed_ = 0;
    std::array<ConvParams, 2> layers_;
};

inline Tensor psi_sapien(const Tensor& hand, const Tensor& face, const FoundationStub& stub) {
    require_feature(hand, "psi_sapien");
    if (hand.shape() != face.shape())
        throw InvalidArgument("psi_sapien: hand " + shape_str(hand.shape()) + " and face " + shape_str(face.shape()) +
                              " shapes differ");
    return require_finite(stub.features(concat_channels({&hand, &face})), "psi_sapien");
}

// ---------------------------------------------------------------------------

struct CompositionConfig {
    double lambda = 0.01;
    bool enable_motion = true;
    bool enable_sapien = true;
};

inline void check_composition(const CompositionConfig& cfg) {
    if (!(cfg.lambda >= 0.0)) throw InvalidArgument("compose_condition: lambda must be non-negative");
}

inline Tensor compose_condition(const Tensor& pose, const Tensor& hand, const Tensor& face,
                                const FoundationStub& stub, const AggregationParams& agg,
                                const CompositionConfig& cfg) {
    check_composition(cfg);
    detail::check_modalities(pose, hand, face, "compose_condition");
    Tensor c = pose;
    c += hand;
    c += face;
    if (cfg.enable_sapien) c += psi_sapien(hand, face, stub);
    if (cfg.enable_motion && cfg.lambda != 0.0) c.axpy(cfg.lambda, psi_motion(pose, hand, face, agg));
    return require_finite(c, "compose_condition");
}

struct CompositionGrads {
    Tensor pose;
    Tensor hand;
    Tensor face;
    AggregationParams agg;
};

inline CompositionGrads compose_condition_backward(const Tensor& pose, const Tensor& hand, const Tensor& face,
                                                   const FoundationStub& stub, const AggregationParams& agg,
                                                   const CompositionConfig& cfg, const Tensor& upstream) {
    check_composition(cfg);
    detail::check_modalities(pose, hand, face, "compose_condition_backward");
    CompositionGrads g{upstream, upstream, upstream, zeros_like(agg)};
    if (cfg.enable_sapien) {
        const Tensor x = concat_channels({&hand, &face});
        const Tensor gx = stub.backward_input(stub.forward(x), upstream);
        g.hand += slice_channels(gx, 0, hand.dim(0));
        g.face += slice_channels(gx, hand.dim(0), face.dim(0));
    }
    if (cfg.enable_motion && cfg.lambda != 0.0) {
        auto mg = psi_motion_backward(pose, hand, face, agg, upstream * cfg.lambda);
        g.pose += mg.pose;
        g.hand += mg.hand;
        g.face += mg.face;
        g.agg = std::move(mg.params);
    }
    return g;
}

}  // namespace signdiff
