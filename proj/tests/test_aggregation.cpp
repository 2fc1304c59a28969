#include <gtest/gtest.h>

#include <cstdlib>

#include "signdiff/aggregation.hpp"

using namespace signdiff;

namespace {

struct Inputs {
    Tensor pose, hand, face;
};

Inputs random_inputs(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    return {rng.normal_tensor(s), rng.normal_tensor(s), rng.normal_tensor(s)};
}

}  // namespace

TEST(Aggregation, ZeroFusionIsBitwiseResidualMean) {
    Rng rng(1);
    const auto p = make_aggregation_params(4, rng);
    for (std::uint64_t seed : {2u, 3u, 4u}) {
        const auto in = random_inputs({4, 4, 8, 8}, seed);
        const Tensor out = psi_motion(in.pose, in.hand, in.face, p);
        Tensor expect = in.pose;
        expect += in.hand;
        expect += in.face;
        expect *= 1.0 / 3.0;
        EXPECT_TRUE(out == expect);
    }
}

TEST(Aggregation, ResidualMeanOfEqualInputsIsIdentity) {
    const auto in = random_inputs({2, 3, 4, 4}, 5);
    const Tensor r = residual_mean(in.pose, in.pose, in.pose);
    EXPECT_LT(max_abs_diff(r, in.pose), 1e-15);
}

TEST(Aggregation, BranchIsSumOfPerModalityConvs) {
    Rng rng(6);
    const auto p = make_aggregation_params(3, rng);
    const auto in = random_inputs({3, 5, 6, 6}, 7);
    for (std::size_t di = 0; di < 3; ++di) {
        const int d = kDilations[di];
        Tensor expect = conv3d_dilated(in.pose, p.branch[0][di]);
        expect += conv3d_dilated(in.hand, p.branch[1][di]);
        expect += conv3d_dilated(in.face, p.branch[2][di]);
        EXPECT_TRUE(multiscale_branch(in.pose, in.hand, in.face, d, p) == expect) << "d=" << d;
    }
}

// A unit impulse in one modality may only reach outputs within d voxels
// along every axis; everything else must be bitwise unchanged.
TEST(Aggregation, ReceptiveFieldPerDilation) {
    Rng rng(8);
    const auto p = make_aggregation_params(2, rng);
    const auto in = random_inputs({2, 9, 9, 9}, 9);
    const std::size_t ct = 4, cy = 4, cx = 4;
    for (Modality mod : kModalities) {
        for (int d : kDilations) {
            Inputs bumped = in;
            Tensor& target = mod == Modality::pose ? bumped.pose : mod == Modality::hand ? bumped.hand : bumped.face;
            target.at(1, ct, cy, cx) += 1.0;
            const Tensor a = multiscale_branch(in.pose, in.hand, in.face, d, p);
            const Tensor b = multiscale_branch(bumped.pose, bumped.hand, bumped.face, d, p);
            std::size_t changed = 0;
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t t = 0; t < 9; ++t)
                    for (std::size_t y = 0; y < 9; ++y)
                        for (std::size_t x = 0; x < 9; ++x) {
                            const long dt = std::labs(long(t) - long(ct)), dy = std::labs(long(y) - long(cy)),
                                       dx = std::labs(long(x) - long(cx));
                            const bool on_grid = dt % d == 0 && dy % d == 0 && dx % d == 0 && dt <= d && dy <= d &&
                                                 dx <= d;
                            if (!on_grid) {
                                ASSERT_EQ(a.at(c, t, y, x), b.at(c, t, y, x))
                                    << modality_name(mod) << " d=" << d << " at " << t << "," << y << "," << x;
                            } else if (a.at(c, t, y, x) != b.at(c, t, y, x)) {
                                ++changed;
                            }
                        }
            EXPECT_GT(changed, 0u) << modality_name(mod) << " d=" << d;
        }
    }
}

TEST(Aggregation, CrossFeatureIsNonNegative) {
    Rng rng(10);
    const auto p = make_aggregation_params(3, rng);
    const auto in = random_inputs({3, 2, 4, 4}, 11);
    const Tensor cross = cross_feature(in.pose, in.hand, in.face, p);
    for (double v : cross.data()) EXPECT_GE(v, 0.0);
}

TEST(Aggregation, OutputShapeMatchesInputs) {
    Rng rng(12);
    auto p = make_aggregation_params(4, rng);
    p.fuse = make_linear(4, 28, rng);
    const auto in = random_inputs({4, 3, 8, 8}, 13);
    EXPECT_EQ(psi_motion(in.pose, in.hand, in.face, p).shape(), in.pose.shape());
}

TEST(Aggregation, RejectsMismatchedModalities) {
    Rng rng(14);
    const auto p = make_aggregation_params(2, rng);
    const auto in = random_inputs({2, 3, 4, 4}, 15);
    const Tensor other({2, 3, 4, 5});
    EXPECT_THROW(psi_motion(in.pose, other, in.face, p), InvalidArgument);
    EXPECT_THROW(psi_motion(in.pose, in.hand, other, p), InvalidArgument);
}

TEST(Aggregation, RejectsWrongFusionShape) {
    Rng rng(16);
    auto p = make_aggregation_params(2, rng);
    p.fuse = zero_linear(2, 12);
    const auto in = random_inputs({2, 3, 4, 4}, 17);
    EXPECT_THROW(psi_motion(in.pose, in.hand, in.face, p), InvalidArgument);
}

TEST(Aggregation, RejectsUnknownDilation) {
    Rng rng(18);
    const auto p = make_aggregation_params(2, rng);
    const auto in = random_inputs({2, 3, 4, 4}, 19);
    EXPECT_THROW(multiscale_branch(in.pose, in.hand, in.face, 3, p), InvalidArgument);
}

TEST(Aggregation, ZeroFusionBackwardSplitsUpstreamInThirds) {
    Rng rng(20);
    const auto p = make_aggregation_params(3, rng);
    const auto in = random_inputs({3, 3, 4, 4}, 21);
    const Tensor up = rng.normal_tensor(in.pose.shape());
    const auto g = psi_motion_backward(in.pose, in.hand, in.face, p, up);
    const Tensor third = up * (1.0 / 3.0);
    EXPECT_TRUE(g.pose == third);
    EXPECT_TRUE(g.hand == third);
    EXPECT_TRUE(g.face == third);
    // Branch weights are unreachable while the fusion conv is zero.
    EXPECT_EQ(max_abs(g.params.branch[1][2].kernel), 0.0);
    EXPECT_GT(max_abs(g.params.fuse.weight), 0.0);
}

TEST(Aggregation, BackwardMatchesDirectionalDerivative) {
    Rng rng(22);
    auto p = make_aggregation_params(2, rng);
    p.fuse = make_linear(2, 14, rng);
    p.cross.bias = rng.uniform_tensor(p.cross.bias.shape(), -0.1, 0.1);
    const auto in = random_inputs({2, 3, 5, 5}, 23);
    const Tensor up = rng.normal_tensor(in.pose.shape());
    const auto g = psi_motion_backward(in.pose, in.hand, in.face, p, up);
    const Tensor dir = rng.normal_tensor(in.hand.shape());
    const double h = 1e-6;
    Tensor plus = in.hand, minus = in.hand;
    plus.axpy(h, dir);
    minus.axpy(-h, dir);
    const double fd =
        (dot(psi_motion(in.pose, plus, in.face, p), up) - dot(psi_motion(in.pose, minus, in.face, p), up)) / (2 * h);
    const double analytic = dot(g.hand, dir);
    EXPECT_NEAR(fd, analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
}
