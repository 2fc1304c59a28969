#pragma once

// Two-level conditional U-Net predicting the diffusion noise.
//
//   level 1 (h x w):   conv_in(z) + cond1(c) + time/appearance -> SiLU -> mid1 -> SiLU -> [temporal1]
//   level 2 (h/2):     down(s1) + cond2(pool(c)) + time/appearance -> SiLU -> mid2 -> SiLU -> [temporal2]
//   decoder (h x w):   up(upsample(s2)) ++ s1 -> dec + time/appearance -> SiLU -> conv_out
//   output:            (conv_out(...) + skip(z)) * exp(gain(time)), skip a 1x1 map
//                      initialized to the identity, gain a per-channel log-scale
//                      initialized to zero
//
// Spatial convs are per-frame 3x3; temporal layers are kernel-3 convs along t
// only, initialized to the identity and applied when enabled.

#include <cmath>
#include <string>

#include "signdiff/kernels.hpp"
#include "signdiff/layers.hpp"

namespace signdiff {

struct UNetConfig {
    std::size_t latent_channels = 48;
    std::size_t cond_channels = 8;
    std::size_t app_dim = 8;
    std::size_t base = 32;
    std::size_t wide = 64;
    std::size_t time_features = 32;
    std::size_t time_dim = 64;
};

struct UNetParams {
    LinearParams time;  // (time_dim, time_features)

    ConvParams in;
    Tensor cond1;  // (base, cond)
    LinearParams temb1;
    Tensor app1;  // (base, app)
    ConvParams mid1;
    ConvParams temporal1;

    ConvParams down;
    Tensor cond2;
    LinearParams temb2;
    Tensor app2;
    ConvParams mid2;
    ConvParams temporal2;

    ConvParams up;
    ConvParams dec;
    LinearParams temb3;
    Tensor app3;
    ConvParams out;
    LinearParams skip;  // (latent, latent)
    LinearParams gain;  // (latent, time_dim), log-scale of the output
};

enum class ParamGroup { spatial, temporal, frozen };

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::spatial: return "spatial";
        case ParamGroup::temporal: return "temporal";
        case ParamGroup::frozen: return "frozen";
    }
    return "?";
}

inline ConvParams identity_temporal(std::size_t channels) {
    ConvParams p{Tensor({channels, channels, 3, 1, 1}), Tensor({channels})};
    for (std::size_t c = 0; c < channels; ++c) p.kernel[(c * channels + c) * 3 + 1] = 1.0;
    return p;
}

inline UNetParams make_unet(const UNetConfig& cfg, Rng& rng) {
    const std::size_t C1 = cfg.base, C2 = cfg.wide;
    UNetParams p;
    p.time = make_linear(cfg.time_dim, cfg.time_features, rng);
    p.in = make_conv(C1, cfg.latent_channels, 1, 3, 3, rng);
    p.cond1 = init_uniform_fan_in({C1, cfg.cond_channels}, rng);
    p.temb1 = make_linear(C1, cfg.time_dim, rng);
    p.app1 = init_uniform_fan_in({C1, cfg.app_dim}, rng);
    p.mid1 = make_conv(C1, C1, 1, 3, 3, rng);
    p.temporal1 = identity_temporal(C1);
    p.down = make_conv(C2, C1, 1, 3, 3, rng);
    p.cond2 = init_uniform_fan_in({C2, cfg.cond_channels}, rng);
    p.temb2 = make_linear(C2, cfg.time_dim, rng);
    p.app2 = init_uniform_fan_in({C2, cfg.app_dim}, rng);
    p.mid2 = make_conv(C2, C2, 1, 3, 3, rng);
    p.temporal2 = identity_temporal(C2);
    p.up = make_conv(C1, C2, 1, 3, 3, rng);
    p.dec = make_conv(C1, 2 * C1, 1, 3, 3, rng);
    p.temb3 = make_linear(C1, cfg.time_dim, rng);
    p.app3 = init_uniform_fan_in({C1, cfg.app_dim}, rng);
    p.out = make_conv(cfg.latent_channels, C1, 1, 3, 3, rng);
    p.skip = zero_linear(cfg.latent_channels, cfg.latent_channels);
    for (std::size_t c = 0; c < cfg.latent_channels; ++c) p.skip.weight[c * cfg.latent_channels + c] = 1.0;
    p.gain = zero_linear(cfg.latent_channels, cfg.time_dim);
    return p;
}

template <class P, class F>
void visit_unet(P& p, const std::string& prefix, F&& f) {
    constexpr auto S = ParamGroup::spatial;
    auto conv = [&](const char* name, auto& c, ParamGroup g) {
        f(prefix + name + ".kernel", c.kernel, g);
        f(prefix + name + ".bias", c.bias, g);
    };
    auto lin = [&](const char* name, auto& l) {
        f(prefix + name + ".weight", l.weight, S);
        f(prefix + name + ".bias", l.bias, S);
    };
    lin("time", p.time);
    conv("in", p.in, S);
    f(prefix + "cond1.weight", p.cond1, S);
    lin("temb1", p.temb1);
    f(prefix + "app1.weight", p.app1, S);
    conv("mid1", p.mid1, S);
    conv("temporal1", p.temporal1, ParamGroup::temporal);
    conv("down", p.down, S);
    f(prefix + "cond2.weight", p.cond2, S);
    lin("temb2", p.temb2);
    f(prefix + "app2.weight", p.app2, S);
    conv("mid2", p.mid2, S);
    conv("temporal2", p.temporal2, ParamGroup::temporal);
    conv("up", p.up, S);
    conv("dec", p.dec, S);
    lin("temb3", p.temb3);
    f(prefix + "app3.weight", p.app3, S);
    conv("out", p.out, S);
    lin("skip", p.skip);
    lin("gain", p.gain);
}

inline UNetParams zeros_like(const UNetParams& p) {
    UNetParams z = p;
    visit_unet(z, "", [](const std::string&, Tensor& t, ParamGroup) { t.fill(0.0); });
    return z;
}

/// Fixed sinusoidal features of the timestep.
inline Tensor timestep_features(int t, std::size_t dim) {
    Tensor s({dim});
    const std::size_t half = dim / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        s[k] = std::sin(t * freq);
        s[half + k] = std::cos(t * freq);
    }
    return s;
}

struct UNetCache {
    bool temporal = false;
    Tensor z, cond, cond_pooled, app;
    Tensor feat, emb_pre, emb;
    Tensor a1, h1, b1, g1, s1;
    Tensor a2, h2, b2, g2, s2;
    Tensor up_in, cat, a3, h3;
    Tensor gain;  // exp of the per-channel log-scale
    Tensor out;
};

namespace detail {

inline Tensor block_shift(const LinearParams& temb, const Tensor& app_w, const Tensor& emb, const Tensor& app) {
    Tensor v = linear(temb.weight, temb.bias, emb);
    v += linear(app_w, Tensor(), app);
    return v;
}

}  // namespace detail

inline void check_unet_inputs(const UNetParams& p, const Tensor& z, const Tensor& cond, const Tensor& app) {
    require_feature(z, "denoise");
    require_feature(cond, "denoise condition");
    if (z.dim(0) != p.in.kernel.dim(1))
        throw InvalidArgument("denoise: latent has " + std::to_string(z.dim(0)) + " channels, model expects " +
                              std::to_string(p.in.kernel.dim(1)));
    if (cond.dim(0) != p.cond1.dim(1) || cond.dim(1) != z.dim(1) || cond.dim(2) != z.dim(2) || cond.dim(3) != z.dim(3))
        throw InvalidArgument("denoise: condition " + shape_str(cond.shape()) + " incompatible with latent " +
                              shape_str(z.shape()));
    if (z.dim(2) % 2 != 0 || z.dim(3) % 2 != 0) throw InvalidArgument("denoise: latent extents must be even");
    require(app.rank() == 1 && app.dim(0) == p.app1.dim(1), "denoise: appearance embedding length mismatch");
}

inline UNetCache unet_forward(const UNetParams& p, const Tensor& z, int t, const Tensor& cond, const Tensor& app,
                              bool temporal) {
    check_unet_inputs(p, z, cond, app);
    const ConvGeometry sp1 = spatial_geometry(1);
    UNetCache k;
    k.temporal = temporal;
    k.z = z;
    k.cond = cond;
    k.app = app;
    k.feat = timestep_features(t, p.time.weight.dim(1));
    k.emb_pre = linear(p.time.weight, p.time.bias, k.feat);
    k.emb = silu(k.emb_pre);

    k.a1 = conv_forward(z, p.in.kernel, p.in.bias, sp1);
    k.a1 += conv1x1(cond, p.cond1, Tensor());
    add_channel_vector(k.a1, detail::block_shift(p.temb1, p.app1, k.emb, app));
    k.h1 = silu(k.a1);
    k.b1 = conv_forward(k.h1, p.mid1.kernel, p.mid1.bias, sp1);
    k.g1 = silu(k.b1);
    k.s1 = temporal ? conv_forward(k.g1, p.temporal1.kernel, p.temporal1.bias, temporal_geometry()) : k.g1;

    k.cond_pooled = avg_pool2(cond);
    k.a2 = conv_forward(k.s1, p.down.kernel, p.down.bias, spatial_geometry(2));
    k.a2 += conv1x1(k.cond_pooled, p.cond2, Tensor());
    add_channel_vector(k.a2, detail::block_shift(p.temb2, p.app2, k.emb, app));
    k.h2 = silu(k.a2);
    k.b2 = conv_forward(k.h2, p.mid2.kernel, p.mid2.bias, sp1);
    k.g2 = silu(k.b2);
    k.s2 = temporal ? conv_forward(k.g2, p.temporal2.kernel, p.temporal2.bias, temporal_geometry()) : k.g2;

    k.up_in = upsample2(k.s2);
    const Tensor u = conv_forward(k.up_in, p.up.kernel, p.up.bias, sp1);
    k.cat = concat_channels({&u, &k.s1});
    k.a3 = conv_forward(k.cat, p.dec.kernel, p.dec.bias, sp1);
    add_channel_vector(k.a3, detail::block_shift(p.temb3, p.app3, k.emb, app));
    k.h3 = silu(k.a3);
    k.out = conv_forward(k.h3, p.out.kernel, p.out.bias, sp1);
    k.out += conv1x1(z, p.skip);
    k.gain = linear(p.gain.weight, p.gain.bias, k.emb);
    for (std::size_t c = 0; c < k.gain.size(); ++c) k.gain[c] = std::exp(k.gain[c]);
    scale_channels(k.out, k.gain);
    if (!all_finite(k.out)) throw NonFiniteError("denoise: non-finite activation");
    return k;
}

struct UNetGrads {
    UNetParams params;
    Tensor cond;
    Tensor app;
};

/// Reverse pass; `grads.params` must be shaped like `p` and is accumulated into.
inline void unet_backward(const UNetParams& p, const UNetCache& k, const Tensor& grad_out, UNetGrads& grads) {
    k.out.check_same(grad_out, "unet_backward");
    const ConvGeometry sp1 = spatial_geometry(1);
    auto& gp = grads.params;
    if (grads.cond.empty()) grads.cond = Tensor::zeros_like(k.cond);
    if (grads.app.empty()) grads.app = Tensor::zeros_like(k.app);
    Tensor demb = Tensor::zeros_like(k.emb);

    auto acc_conv = [](ConvParams& dst, ConvGrads& g) {
        dst.kernel += g.kernel;
        dst.bias += g.bias;
    };
    auto acc_shift = [&](LinearParams& temb_g, Tensor& app_g, const LinearParams& temb, const Tensor& app_w,
                         const Tensor& dpre) {
        const Tensor v = channel_sums(dpre);
        auto lt = linear_backward(temb.weight, k.emb, v);
        temb_g.weight += lt.weight;
        temb_g.bias += lt.bias;
        demb += lt.input;
        auto la = linear_backward(app_w, k.app, v);
        app_g += la.weight;
        grads.app += la.input;
    };

    Tensor dlog = k.out;
    for (std::size_t i = 0; i < dlog.size(); ++i) dlog[i] *= grad_out[i];
    auto lg = linear_backward(p.gain.weight, k.emb, channel_sums(dlog));
    gp.gain.weight += lg.weight;
    gp.gain.bias += lg.bias;
    demb += lg.input;
    Tensor dpre = grad_out;
    scale_channels(dpre, k.gain);

    auto gsk = conv1x1_backward(k.z, p.skip.weight, dpre, false);
    gp.skip.weight += gsk.kernel;
    gp.skip.bias += gsk.bias;
    auto go = conv_backward(k.h3, p.out.kernel, sp1, dpre);
    acc_conv(gp.out, go);
    const Tensor da3 = silu_backward(k.a3, go.input);
    acc_shift(gp.temb3, gp.app3, p.temb3, p.app3, da3);
    auto gd = conv_backward(k.cat, p.dec.kernel, sp1, da3);
    acc_conv(gp.dec, gd);
    const std::size_t C1 = p.in.kernel.dim(0);
    const Tensor du = slice_channels(gd.input, 0, C1);
    Tensor ds1 = slice_channels(gd.input, C1, C1);

    auto gu = conv_backward(k.up_in, p.up.kernel, sp1, du);
    acc_conv(gp.up, gu);
    Tensor dg2 = upsample2_backward(gu.input);
    if (k.temporal) {
        auto gt = conv_backward(k.g2, p.temporal2.kernel, temporal_geometry(), dg2);
        acc_conv(gp.temporal2, gt);
        dg2 = std::move(gt.input);
    }
    const Tensor db2 = silu_backward(k.b2, dg2);
    auto gm2 = conv_backward(k.h2, p.mid2.kernel, sp1, db2);
    acc_conv(gp.mid2, gm2);
    const Tensor da2 = silu_backward(k.a2, gm2.input);
    acc_shift(gp.temb2, gp.app2, p.temb2, p.app2, da2);
    auto gc2 = conv1x1_backward(k.cond_pooled, p.cond2, da2);
    gp.cond2 += gc2.kernel;
    grads.cond += avg_pool2_backward(gc2.input, k.cond.shape());
    auto gdn = conv_backward(k.s1, p.down.kernel, spatial_geometry(2), da2);
    acc_conv(gp.down, gdn);
    ds1 += gdn.input;

    Tensor dg1 = std::move(ds1);
    if (k.temporal) {
        auto gt = conv_backward(k.g1, p.temporal1.kernel, temporal_geometry(), dg1);
        acc_conv(gp.temporal1, gt);
        dg1 = std::move(gt.input);
    }
    const Tensor db1 = silu_backward(k.b1, dg1);
    auto gm1 = conv_backward(k.h1, p.mid1.kernel, sp1, db1);
    acc_conv(gp.mid1, gm1);
    const Tensor da1 = silu_backward(k.a1, gm1.input);
    acc_shift(gp.temb1, gp.app1, p.temb1, p.app1, da1);
    auto gc1 = conv1x1_backward(k.cond, p.cond1, da1);
    gp.cond1 += gc1.kernel;
    grads.cond += gc1.input;
    auto gi = conv_backward(k.z, p.in.kernel, sp1, da1, false);
    acc_conv(gp.in, gi);

    const Tensor demb_pre = silu_backward(k.emb_pre, demb);
    auto lt = linear_backward(p.time.weight, k.feat, demb_pre);
    gp.time.weight += lt.weight;
    gp.time.bias += lt.bias;
}

inline Tensor denoise(const UNetParams& p, const Tensor& z_t, int t, const Tensor& cond, const Tensor& app,
                      bool temporal) {
    return unet_forward(p, z_t, t, cond, app, temporal).out;
}

}  // namespace signdiff
