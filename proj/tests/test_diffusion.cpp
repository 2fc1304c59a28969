#include <gtest/gtest.h>

#include <cmath>

#include "signdiff/diffusion.hpp"

using namespace signdiff;

namespace {

const NoiseSchedule& default_schedule() {
    static const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    return s;
}

// Recovers the exact noise from a known clean latent.
Denoiser oracle_denoiser(const Tensor& z0, const NoiseSchedule& s) {
    return [z0, &s](const Tensor& z_t, int t, const Tensor&, const Tensor&) {
        const double ab = s.alpha_bar_at(t);
        Tensor eps = z_t;
        eps.axpy(-std::sqrt(ab), z0);
        eps *= 1.0 / std::sqrt(1.0 - ab);
        return eps;
    };
}

}  // namespace

TEST(Schedule, LinearBetaEndpoints) {
    const auto& s = default_schedule();
    EXPECT_EQ(s.steps(), 1000);
    EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta_at(1000), 0.02);
    EXPECT_NEAR(s.beta_at(500) - s.beta_at(499), (0.02 - 1e-4) / 999, 1e-15);
}

TEST(Schedule, AlphaBarStrictlyDecreasing) {
    const auto& s = default_schedule();
    EXPECT_EQ(s.alpha_bar_at(0), 1.0);
    for (int t = 1; t <= s.steps(); ++t) {
        ASSERT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1)) << "t=" << t;
        ASSERT_GT(s.alpha_bar_at(t), 0.0);
    }
}

TEST(Schedule, AlphaBarIsCumulativeProduct) {
    const auto& s = default_schedule();
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) prod *= 1.0 - s.beta_at(t);
    EXPECT_NEAR(s.alpha_bar_at(1000), prod, 1e-15);
    // Closed form for this schedule, computed independently in log space.
    double log_ab = 0.0;
    for (int i = 0; i < 1000; ++i) log_ab += std::log1p(-(1e-4 + (0.02 - 1e-4) * i / 999.0));
    EXPECT_NEAR(std::log(s.alpha_bar_at(1000)), log_ab, 1e-9);
}

TEST(Schedule, RejectsOutOfRangeSteps) {
    const auto& s = default_schedule();
    EXPECT_THROW(s.beta_at(0), InvalidArgument);
    EXPECT_THROW(s.alpha_bar_at(1001), InvalidArgument);
    EXPECT_THROW(make_schedule(10, 0.1, 0.01), InvalidArgument);
    EXPECT_THROW(make_schedule(0, 0.1, 0.2), InvalidArgument);
}

TEST(Schedule, ForwardNoisingInvertsAtRandomSteps) {
    const auto& s = default_schedule();
    Rng rng(1);
    const Tensor z0 = rng.normal_tensor({4, 2, 8, 8});
    for (int k = 0; k < 10; ++k) {
        const int t = static_cast<int>(rng.uniform_int(1, 1000));
        const Tensor eps = rng.normal_tensor(z0.shape());
        const Tensor z_t = q_sample(z0, t, eps, s);
        EXPECT_LT(max_abs_diff(predict_z0(z_t, t, eps, s), z0), 1e-10) << "t=" << t;
        EXPECT_LT(max_abs_diff(posterior_mean(z_t, t, eps, s), posterior_mean_from_z0(z0, z_t, t, s)), 1e-10)
            << "t=" << t;
    }
}

TEST(Schedule, TerminalVarianceMonteCarlo) {
    const auto& s = default_schedule();
    Rng rng(2);
    const int n = 100000;
    const Tensor z0({1}, 0.7);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = q_sample(z0, 1000, rng.normal_tensor({1}), s)[0];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = (sum2 - n * mean * mean) / (n - 1);
    const double expect = 1.0 - s.alpha_bar_at(1000);
    EXPECT_LT(std::abs(var - expect) / expect, 0.02);
    EXPECT_NEAR(mean, std::sqrt(s.alpha_bar_at(1000)) * 0.7, 0.02);
}

TEST(Loss, OracleDenoiserHasZeroLoss) {
    const auto& s = default_schedule();
    Rng rng(3);
    const Tensor z0 = rng.normal_tensor({2, 1, 4, 4});
    const LossItem item{z0, Tensor({1}), Tensor({1})};
    const std::vector<LossItem> items{item, item, item};
    EXPECT_LT(diffusion_loss(items, oracle_denoiser(z0, s), s, rng), 1e-20);
}

TEST(Loss, ZeroDenoiserLossIsNoiseEnergy) {
    const auto& s = default_schedule();
    Rng rng(4);
    const LossItem item{rng.normal_tensor({2, 1, 4, 4}), Tensor({1}), Tensor({1})};
    const std::vector<LossItem> items{item, item};
    const auto draws = draw_noise(items, s, rng);
    Denoiser zero = [](const Tensor& z, int, const Tensor&, const Tensor&) { return Tensor::zeros_like(z); };
    const double expect = 0.5 * (dot(draws[0].eps, draws[0].eps) + dot(draws[1].eps, draws[1].eps)) / 32.0;
    EXPECT_NEAR(diffusion_loss(items, draws, zero, s), expect, 1e-12);
}

TEST(Loss, RejectsEmptyBatch) {
    const auto& s = default_schedule();
    Rng rng(5);
    Denoiser zero = [](const Tensor& z, int, const Tensor&, const Tensor&) { return Tensor::zeros_like(z); };
    EXPECT_THROW(diffusion_loss(std::vector<LossItem>{}, zero, s, rng), InvalidArgument);
}

TEST(Sampler, OracleDenoiserRecoversCleanLatent) {
    const NoiseSchedule s = make_schedule(200, 1e-4, 0.02);
    Rng rng(6);
    const Tensor z0 = rng.normal_tensor({3, 1, 4, 4});
    const Tensor z = ddpm_sample(Tensor({1}), Tensor({1}), oracle_denoiser(z0, s), s, 7, z0.shape());
    EXPECT_LT(max_abs_diff(z, z0), 1e-10);
}

TEST(Sampler, SeedDeterminesSample) {
    const NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Denoiser half = [](const Tensor& z, int, const Tensor&, const Tensor&) { return z * 0.5; };
    const Shape shape{2, 1, 4, 4};
    const Tensor a = ddpm_sample(Tensor({1}), Tensor({1}), half, s, 11, shape);
    EXPECT_TRUE(a == ddpm_sample(Tensor({1}), Tensor({1}), half, s, 11, shape));
    EXPECT_FALSE(a == ddpm_sample(Tensor({1}), Tensor({1}), half, s, 12, shape));
}

TEST(Sampler, VisitsEveryStepDescending) {
    const NoiseSchedule s = make_schedule(20, 1e-4, 0.02);
    Denoiser zero = [](const Tensor& z, int, const Tensor&, const Tensor&) { return Tensor::zeros_like(z); };
    std::vector<int> steps;
    ddpm_sample(Tensor({1}), Tensor({1}), zero, s, 1, {1, 1, 2, 2}, [&](int t) { steps.push_back(t); });
    ASSERT_EQ(steps.size(), 20u);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(steps[i], 20 - i);
}

TEST(Parameterization, ExactTargetsGiveExactNoise) {
    ModelConfig cfg;
    Rng rng(8);
    const Tensor z0 = rng.normal_tensor({48, 1, 8, 8});
    const Tensor eps = rng.normal_tensor(z0.shape());
    for (auto p : {OutputParameterization::epsilon, OutputParameterization::velocity, OutputParameterization::sample}) {
        cfg.output = p;
        const Model m = make_model(cfg);
        for (int t : {1, 37, 500, 1000}) {
            const double ab = m.schedule.alpha_bar_at(t);
            const Tensor z_t = q_sample(z0, t, eps, m.schedule);
            Tensor f;
            if (p == OutputParameterization::epsilon) f = eps;
            else if (p == OutputParameterization::velocity) f = std::sqrt(ab) * eps - std::sqrt(1.0 - ab) * z0;
            else f = z0;
            EXPECT_LT(max_abs_diff(scale_output(output_scaling(m, t), f, z_t), eps), 1e-9)
                << parameterization_name(p) << " t=" << t;
        }
    }
    EXPECT_EQ(parse_parameterization("velocity"), OutputParameterization::velocity);
    EXPECT_THROW(parse_parameterization("x0"), InvalidArgument);
}

TEST(Latent, EncodeDecodeRoundTrip) {
    const Model m = make_model(ModelConfig{});
    Rng rng(9);
    const Tensor clip = rng.uniform_tensor({3, 2, 32, 32}, 0.0, 1.0);
    const Tensor z = encode_latent(m, clip);
    EXPECT_EQ(z.shape(), (Shape{48, 2, 8, 8}));
    EXPECT_LT(max_abs_diff(decode_latent(m, z), clip), 1e-12);
}

TEST(UNet, OutputGainStartsAtOneAndScalesPerChannel) {
    UNetConfig uc;
    uc.latent_channels = 3;
    uc.cond_channels = 2;
    uc.app_dim = 2;
    uc.base = 4;
    uc.wide = 4;
    Rng rng(10);
    UNetParams p = make_unet(uc, rng);
    const Tensor z = rng.normal_tensor({3, 1, 4, 4}), cond = rng.normal_tensor({2, 1, 4, 4}), app = rng.normal_tensor({2});
    const UNetCache k = unet_forward(p, z, 250, cond, app, false);
    for (double g : k.gain.data()) EXPECT_EQ(g, 1.0);

    p.gain.bias[1] = std::log(2.0);
    const Tensor scaled = denoise(p, z, 250, cond, app, false);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 16; ++i)
            EXPECT_NEAR(scaled[c * 16 + i], (c == 1 ? 2.0 : 1.0) * k.out[c * 16 + i], 1e-12);
}
