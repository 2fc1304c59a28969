#pragma once

// Sign-feature aggregation: multi-dilation 3D branches summed across pose,
// hand and face latents, a ReLU cross-feature mix, a 1x1 fusion over the
// seven-way concatenation, and a residual mean of the three inputs.

#include <array>
#include <string>

#include "signdiff/layers.hpp"

namespace signdiff {

enum class Modality : int { pose = 0, hand = 1, face = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::pose, Modality::hand, Modality::face};
inline constexpr std::array<int, 3> kDilations{1, 2, 4};

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::pose: return "pose";
        case Modality::hand: return "hand";
        case Modality::face: return "face";
    }
    return "?";
}

inline std::size_t dilation_index(int d) {
    for (std::size_t i = 0; i < kDilations.size(); ++i)
        if (kDilations[i] == d) return i;
    throw InvalidArgument("aggregation: dilation must be one of {1, 2, 4}, got " + std::to_string(d));
}

struct AggregationParams {
    // branch[modality][dilation index], each c -> c.
    std::array<std::array<Conv3dParams, 3>, 3> branch;
    LinearParams cross;  // 3c -> c
    LinearParams fuse;   // 7c -> c

    std::size_t channels() const { return cross.weight.dim(0); }
};

/// Branch and cross-feature weights drawn U(+-1/sqrt(fan_in)); the fusion
/// conv starts at zero so the module is initially the residual mean.
inline AggregationParams make_aggregation_params(std::size_t channels, Rng& rng) {
    AggregationParams p;
    for (Modality m : kModalities)
        for (std::size_t di = 0; di < kDilations.size(); ++di)
            p.branch[static_cast<int>(m)][di] = make_conv3d(channels, channels, kDilations[di], rng);
    p.cross = make_linear(channels, 3 * channels, rng);
    p.fuse = zero_linear(channels, 7 * channels);
    return p;
}

inline AggregationParams zeros_like(const AggregationParams& p) {
    AggregationParams z = p;
    for (auto& row : z.branch)
        for (auto& b : row) {
            b.kernel.fill(0.0);
            b.bias.fill(0.0);
        }
    for (Tensor* t : {&z.cross.weight, &z.cross.bias, &z.fuse.weight, &z.fuse.bias}) t->fill(0.0);
    return z;
}

template <class P, class F>
void visit_aggregation(P& p, const std::string& prefix, F&& f) {
    for (Modality m : kModalities)
        for (std::size_t di = 0; di < kDilations.size(); ++di) {
            auto& b = p.branch[static_cast<int>(m)][di];
            const std::string base = prefix + modality_name(m) + ".d" + std::to_string(kDilations[di]);
            f(base + ".kernel", b.kernel);
            f(base + ".bias", b.bias);
        }
    f(prefix + "cross.weight", p.cross.weight);
    f(prefix + "cross.bias", p.cross.bias);
    f(prefix + "fuse.weight", p.fuse.weight);
    f(prefix + "fuse.bias", p.fuse.bias);
}

namespace detail {

inline void check_modalities(const Tensor& pose, const Tensor& hand, const Tensor& face, const char* what) {
    require_feature(pose, what);
    if (hand.shape() != pose.shape() || face.shape() != pose.shape())
        throw InvalidArgument(std::string(what) + ": modality shapes differ: pose " + shape_str(pose.shape()) +
                              ", hand " + shape_str(hand.shape()) + ", face " + shape_str(face.shape()));
}

inline void check_fusion(const AggregationParams& p, std::size_t c) {
    if (p.fuse.weight.rank() != 2 || p.fuse.weight.dim(1) != 7 * c || p.fuse.weight.dim(0) != c)
        throw InvalidArgument("psi_motion: fusion weights must be (c, 7c) = (" + std::to_string(c) + ", " +
                              std::to_string(7 * c) + "), got " + shape_str(p.fuse.weight.shape()));
}

}  // namespace detail

/// m_d = conv_d(f_pose) + conv_d(f_hand) + conv_d(f_face).
inline Tensor multiscale_branch(const Tensor& pose, const Tensor& hand, const Tensor& face, int dilation,
                                const AggregationParams& p) {
    detail::check_modalities(pose, hand, face, "multiscale_branch");
    const std::size_t di = dilation_index(dilation);
    const std::array<const Tensor*, 3> inputs{&pose, &hand, &face};
    Tensor m = conv3d_dilated(*inputs[0], p.branch[0][di]);
    for (int k = 1; k < 3; ++k) m += conv3d_dilated(*inputs[k], p.branch[k][di]);
    return m;
}

inline Tensor cross_feature(const Tensor& pose, const Tensor& hand, const Tensor& face, const AggregationParams& p) {
    detail::check_modalities(pose, hand, face, "cross_feature");
    return relu(conv1x1(concat_channels({&pose, &hand, &face}), p.cross));
}

inline Tensor residual_mean(const Tensor& pose, const Tensor& hand, const Tensor& face) {
    Tensor r = pose;
    r += hand;
    r += face;
    r *= 1.0 / 3.0;
    return r;
}

inline Tensor psi_motion(const Tensor& pose, const Tensor& hand, const Tensor& face, const AggregationParams& p) {
    detail::check_modalities(pose, hand, face, "psi_motion");
    detail::check_fusion(p, pose.dim(0));
    const Tensor cross = cross_feature(pose, hand, face, p);
    const Tensor m1 = multiscale_branch(pose, hand, face, 1, p);
    const Tensor m2 = multiscale_branch(pose, hand, face, 2, p);
    const Tensor m4 = multiscale_branch(pose, hand, face, 4, p);
    const Tensor a = concat_channels({&pose, &hand, &face, &cross, &m1, &m2, &m4});
    Tensor out = conv1x1(a, p.fuse);
    out += residual_mean(pose, hand, face);
    return out;
}

struct AggregationGrads {
    Tensor pose;
    Tensor hand;
    Tensor face;
    AggregationParams params;
};

/// Reverse pass of psi_motion; recomputes the forward intermediates.
inline AggregationGrads psi_motion_backward(const Tensor& pose, const Tensor& hand, const Tensor& face,
                                            const AggregationParams& p, const Tensor& upstream) {
    detail::check_modalities(pose, hand, face, "psi_motion_backward");
    detail::check_fusion(p, pose.dim(0));
    pose.check_same(upstream, "psi_motion_backward");
    const std::size_t c = pose.dim(0);
    const std::array<const Tensor*, 3> inputs{&pose, &hand, &face};

    const Tensor x3 = concat_channels({&pose, &hand, &face});
    const Tensor cross_pre = conv1x1(x3, p.cross);
    const Tensor cross = relu(cross_pre);
    std::array<Tensor, 3> m;
    for (std::size_t di = 0; di < 3; ++di) m[di] = multiscale_branch(pose, hand, face, kDilations[di], p);
    const Tensor a = concat_channels({&pose, &hand, &face, &cross, &m[0], &m[1], &m[2]});

    AggregationGrads g{Tensor::zeros_like(pose), Tensor::zeros_like(pose), Tensor::zeros_like(pose), zeros_like(p)};
    std::array<Tensor*, 3> dinputs{&g.pose, &g.hand, &g.face};

    auto fuse = conv1x1_backward(a, p.fuse.weight, upstream);
    g.params.fuse.weight = std::move(fuse.kernel);
    g.params.fuse.bias = std::move(fuse.bias);
    const Tensor& da = fuse.input;

    Tensor third = upstream * (1.0 / 3.0);
    for (std::size_t k = 0; k < 3; ++k) {
        *dinputs[k] += slice_channels(da, k * c, c);
        *dinputs[k] += third;
    }

    const Tensor dcross_pre = relu_backward(cross_pre, slice_channels(da, 3 * c, c));
    auto cg = conv1x1_backward(x3, p.cross.weight, dcross_pre);
    g.params.cross.weight = std::move(cg.kernel);
    g.params.cross.bias = std::move(cg.bias);
    for (std::size_t k = 0; k < 3; ++k) *dinputs[k] += slice_channels(cg.input, k * c, c);

    for (std::size_t di = 0; di < 3; ++di) {
        const Tensor dm = slice_channels(da, (4 + di) * c, c);
        for (std::size_t k = 0; k < 3; ++k) {
            auto bg = conv3d_dilated_backward(*inputs[k], p.branch[k][di], dm);
            g.params.branch[k][di].kernel = std::move(bg.kernel);
            g.params.branch[k][di].bias = std::move(bg.bias);
            *dinputs[k] += bg.input;
        }
    }
    return g;
}

}  // namespace signdiff
