#pragma once

// Finite-difference checks of every hand-written backward pass, grouped by
// component for the `gradcheck` command.

#include <functional>
#include <string>
#include <vector>

#include "signdiff/gradcheck.hpp"
#include "signdiff/training.hpp"

namespace signdiff {

struct GradComponent {
    std::string name;
    std::function<GradCheckResult()> run;
};

struct GradComponentResult {
    std::string name;
    GradCheckResult check;
    bool pass = false;
};

struct GradSuiteResult {
    std::vector<GradComponentResult> components;
    bool all_pass() const {
        for (const auto& c : components)
            if (!c.pass) return false;
        return true;
    }
};

inline constexpr double kGradTolerance = 1e-5;
inline constexpr double kGradStep = 1e-5;

/// Scalar objective over a list of tensors, packed into one flat vector.
class PackedTensors {
public:
    explicit PackedTensors(std::vector<Tensor*> tensors) : tensors_(std::move(tensors)) {}

    std::vector<double> pack() const {
        std::vector<double> x;
        for (const Tensor* t : tensors_) x.insert(x.end(), t->data().begin(), t->data().end());
        return x;
    }

    void unpack(std::span<const double> x) const {
        std::size_t i = 0;
        for (Tensor* t : tensors_)
            for (double& v : t->data()) v = x[i++];
    }

    static std::vector<double> flatten(const std::vector<const Tensor*>& grads) {
        std::vector<double> g;
        for (const Tensor* t : grads) g.insert(g.end(), t->data().begin(), t->data().end());
        return g;
    }

private:
    std::vector<Tensor*> tensors_;
};

/// Runs f on perturbed copies of `tensors` (restored afterwards) and compares
/// with `analytic`, laid out in the same order.
inline GradCheckResult check_packed(const std::vector<Tensor*>& tensors, const std::function<double()>& f,
                                    const std::vector<double>& analytic) {
    PackedTensors packed(tensors);
    const std::vector<double> x0 = packed.pack();
    auto result = finite_diff_check(
        [&](std::span<const double> x) {
            packed.unpack(x);
            return f();
        },
        x0, analytic, kGradStep);
    packed.unpack(x0);
    return result;
}

namespace detail {

inline GradCheckResult check_conv3d(int d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = rng.normal_tensor({3, 4, 6, 6});
    Conv3dParams p = make_conv3d(2, 3, d, rng);
    p.bias = rng.normal_tensor({2});
    const Tensor w = rng.normal_tensor({2, 4, 6, 6});
    const auto g = conv3d_dilated_backward(x, p, w);
    return check_packed({&x, &p.kernel, &p.bias}, [&] { return dot(conv3d_dilated(x, p), w); },
                        PackedTensors::flatten({&g.input, &g.kernel, &g.bias}));
}

inline GradCheckResult check_conv1x1(std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = rng.normal_tensor({4, 4, 8, 8});
    LinearParams p{rng.normal_tensor({2, 4}), rng.normal_tensor({2})};
    const Tensor w = rng.normal_tensor({2, 4, 8, 8});
    const auto g = conv1x1_backward(x, p.weight, w);
    return check_packed({&x, &p.weight, &p.bias}, [&] { return dot(conv1x1(x, p), w); },
                        PackedTensors::flatten({&g.input, &g.kernel, &g.bias}));
}

inline GradCheckResult check_psi_motion(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t c = 2;
    Tensor pose = rng.normal_tensor({c, 3, 5, 5}), hand = rng.normal_tensor({c, 3, 5, 5}),
           face = rng.normal_tensor({c, 3, 5, 5});
    AggregationParams p = make_aggregation_params(c, rng);
    p.fuse = make_linear(c, 7 * c, rng);  // non-zero so every branch is exercised
    const Tensor w = rng.normal_tensor({c, 3, 5, 5});
    const auto g = psi_motion_backward(pose, hand, face, p, w);
    std::vector<Tensor*> xs{&pose, &hand, &face};
    std::vector<const Tensor*> gs{&g.pose, &g.hand, &g.face};
    visit_aggregation(p, "", [&](const std::string&, Tensor& t) { xs.push_back(&t); });
    visit_aggregation(g.params, "", [&](const std::string&, const Tensor& t) { gs.push_back(&t); });
    return check_packed(xs, [&] { return dot(psi_motion(pose, hand, face, p), w); }, PackedTensors::flatten(gs));
}

inline UNetConfig tiny_unet_config() {
    UNetConfig c;
    c.latent_channels = 3;
    c.cond_channels = 2;
    c.app_dim = 2;
    c.base = 4;
    c.wide = 5;
    c.time_features = 4;
    c.time_dim = 6;
    return c;
}

inline GradCheckResult check_denoiser(std::uint64_t seed) {
    Rng rng(seed);
    UNetParams p = make_unet(tiny_unet_config(), rng);
    // Move the temporal layers away from the identity so their gradients are generic.
    for (auto* c : {&p.temporal1, &p.temporal2}) {
        for (double& v : c->kernel.data()) v += rng.uniform(-0.3, 0.3);
        for (double& v : c->bias.data()) v += rng.uniform(-0.3, 0.3);
    }
    const Tensor z = rng.normal_tensor({3, 3, 4, 4});
    Tensor cond = rng.normal_tensor({2, 3, 4, 4}), app = rng.normal_tensor({2});
    const Tensor w = rng.normal_tensor({3, 3, 4, 4});
    const int t = 37;
    UNetGrads g;
    g.params = zeros_like(p);
    unet_backward(p, unet_forward(p, z, t, cond, app, true), w, g);
    std::vector<Tensor*> xs;
    std::vector<const Tensor*> gs;
    visit_unet(p, "", [&](const std::string&, Tensor& v, ParamGroup) { xs.push_back(&v); });
    visit_unet(g.params, "", [&](const std::string&, const Tensor& v, ParamGroup) { gs.push_back(&v); });
    xs.push_back(&cond);
    xs.push_back(&app);
    gs.push_back(&g.cond);
    gs.push_back(&g.app);
    return check_packed(xs, [&] { return dot(denoise(p, z, t, cond, app, true), w); }, PackedTensors::flatten(gs));
}

inline ModelConfig tiny_model_config() {
    ModelConfig c;
    c.image_size = 8;
    c.feature_channels = 2;
    c.unet_base = 4;
    c.unet_wide = 4;
    c.app_dim = 2;
    c.app_hidden = 2;
    c.composition.lambda = 0.5;
    c.diffusion_steps = 50;
    c.beta_end = 0.2;
    return c;
}

/// Gradient of the full phase-1 objective with respect to every spatial
/// parameter: U-Net, encoders, aggregation and appearance encoder.
inline GradCheckResult check_diffusion_loss(std::uint64_t seed) {
    ModelConfig cfg = tiny_model_config();
    cfg.init_seed = seed;
    Model m = make_model(cfg);
    Rng rng(seed + 1);
    m.params.agg.fuse = make_linear(cfg.feature_channels, 7 * cfg.feature_channels, rng);
    // Zero biases put ReLU pre-activations exactly on the kink wherever a
    // layer's input is all zero; random biases keep every point differentiable.
    visit_model(m.params, [&](const std::string& name, Tensor& v, ParamGroup) {
        if (name.ends_with("bias"))
            for (double& b : v.data()) b = rng.uniform(-0.1, 0.1);
    });
    std::vector<ModalityBundle> data;
    for (int i = 0; i < 2; ++i) {
        ModalityBundle b;
        for (Tensor* t : {&b.pose_map, &b.hand_map, &b.face_map, &b.target_clip}) *t = rng.uniform_tensor({3, 2, 8, 8}, 0, 1);
        b.reference_image = rng.uniform_tensor({3, 8, 8}, 0, 1);
        data.push_back(std::move(b));
    }
    std::vector<Tensor> latents;
    for (const auto& b : data) latents.push_back(encode_latent(m, b.target_clip));
    const auto items = draw_frame_items(m, latents, 3, rng);
    const auto lg = phase1_objective(m, data, latents, items);

    std::vector<Tensor*> xs;
    std::vector<const Tensor*> gs;
    visit_model(m.params, [&](const std::string&, Tensor& v, ParamGroup g) {
        if (g == ParamGroup::spatial) xs.push_back(&v);
    });
    visit_model(lg.grads, [&](const std::string&, const Tensor& v, ParamGroup g) {
        if (g == ParamGroup::spatial) gs.push_back(&v);
    });
    return check_packed(xs, [&] { return phase1_loss(m, data, latents, items); }, PackedTensors::flatten(gs));
}

}  // namespace detail

inline std::vector<GradComponent> default_grad_components(std::uint64_t seed = 0) {
    return {
        {"conv3d_d1", [seed] { return detail::check_conv3d(1, seed + 1); }},
        {"conv3d_d2", [seed] { return detail::check_conv3d(2, seed + 2); }},
        {"conv3d_d4", [seed] { return detail::check_conv3d(4, seed + 3); }},
        {"conv1x1", [seed] { return detail::check_conv1x1(seed + 4); }},
        {"psi_motion", [seed] { return detail::check_psi_motion(seed + 5); }},
        {"denoiser", [seed] { return detail::check_denoiser(seed + 6); }},
        {"diffusion_loss", [seed] { return detail::check_diffusion_loss(seed + 7); }},
    };
}

inline GradSuiteResult run_grad_suite(const std::vector<GradComponent>& components,
                                      double tolerance = kGradTolerance) {
    GradSuiteResult r;
    for (const auto& c : components) {
        GradComponentResult row{c.name, {}, false};
        row.check = c.run();
        row.pass = row.check.max_relative_error < tolerance;
        r.components.push_back(row);
    }
    return r;
}

}  // namespace signdiff
