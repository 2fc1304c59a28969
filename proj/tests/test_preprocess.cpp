#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <set>

#include "signdiff/preprocess.hpp"

using namespace signdiff;

namespace {

// Correlated colours in [0, 1]: a shared intensity plus small per-channel noise.
HandCrop correlated_crop(std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor px({h, w, 3});
    for (std::size_t i = 0; i < h * w; ++i) {
        const double s = rng.uniform(0.1, 0.8);
        px[i * 3 + 0] = s + rng.uniform(0.0, 0.1);
        px[i * 3 + 1] = 0.8 * s + rng.uniform(0.0, 0.1);
        px[i * 3 + 2] = 0.5 * s + rng.uniform(0.0, 0.2);
    }
    return {px, 0};
}

Eigen::MatrixXd population_covariance(const Tensor& px) {
    const Eigen::Index n = static_cast<Eigen::Index>(px.dim(0) * px.dim(1));
    const Eigen::Index c = static_cast<Eigen::Index>(px.dim(2));
    Eigen::MatrixXd x(n, c);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < c; ++k) x(i, k) = px[static_cast<std::size_t>(i * c + k)];
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(n);
}

}  // namespace

TEST(Pca, TopEigenvalueMatchesEigenSolver) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const HandCrop crop = correlated_crop(7, 9, seed);
        const HandPca r = pca_hand_reduce(crop);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(population_covariance(crop.pixels));
        EXPECT_NEAR(r.eigenvalue, es.eigenvalues().maxCoeff(), 1e-10) << "seed " << seed;
    }
}

TEST(Pca, ProjectionVarianceIsTopEigenvalue) {
    const HandCrop crop = correlated_crop(10, 10, 4);
    const HandPca r = pca_hand_reduce(crop);
    double mean = 0.0, var = 0.0;
    for (double v : r.projection.data()) mean += v;
    mean /= 100.0;
    for (double v : r.projection.data()) var += (v - mean) * (v - mean);
    var /= 100.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(population_covariance(crop.pixels));
    EXPECT_NEAR(var, es.eigenvalues().maxCoeff(), 1e-10);
}

TEST(Pca, ComponentMatchesEigenvectorUpToSign) {
    const HandCrop crop = correlated_crop(6, 8, 5);
    const HandPca r = pca_hand_reduce(crop);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(population_covariance(crop.pixels));
    const Eigen::VectorXd top = es.eigenvectors().col(2);
    double d = 0.0, norm = 0.0;
    for (int k = 0; k < 3; ++k) {
        d += top(k) * r.component[k];
        norm += r.component[k] * r.component[k];
    }
    EXPECT_NEAR(norm, 1.0, 1e-12);
    EXPECT_NEAR(std::abs(d), 1.0, 1e-10);
}

TEST(Pca, RankOneColoursReconstructExactly) {
    Rng rng(6);
    const std::array<double, 3> base{0.2, 0.3, 0.1}, dir{0.6, 0.3, 0.5};
    Tensor px({5, 6, 3});
    for (std::size_t i = 0; i < 30; ++i) {
        const double s = rng.uniform(0.0, 1.0);
        for (std::size_t k = 0; k < 3; ++k) px[i * 3 + k] = base[k] + s * dir[k];
    }
    const HandPca r = pca_hand_reduce({px, 0});
    EXPECT_LT(max_abs_diff(r.reconstruct(), px), 1e-12);
    EXPECT_FALSE(r.degenerate);
}

TEST(Pca, ConstantCropIsDegenerate) {
    const HandPca r = pca_hand_reduce({Tensor({4, 4, 3}, 0.4), 0});
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(max_abs(r.projection), 0.0);
    EXPECT_LT(max_abs_diff(r.reconstruct(), Tensor({4, 4, 3}, 0.4)), 1e-15);
}

TEST(Pca, SignConventionLargestEntryPositive) {
    const HandPca r = pca_hand_reduce(correlated_crop(5, 5, 7));
    std::size_t big = 0;
    for (std::size_t k = 1; k < 3; ++k)
        if (std::abs(r.component[k]) > std::abs(r.component[big])) big = k;
    EXPECT_GT(r.component[big], 0.0);
}

TEST(Pca, RejectsBadCrops) {
    EXPECT_THROW(pca_hand_reduce({Tensor({4, 4}), 0}), InvalidArgument);
    EXPECT_THROW(pca_hand_reduce({Tensor({1, 1, 3}), 0}), InvalidArgument);
    EXPECT_THROW(pca_hand_reduce({Tensor({2, 2, 3}, 1.5), 0}), InvalidArgument);
}

TEST(Eigensolver, MatchesEigenOnRandomSymmetric) {
    Rng rng(8);
    for (std::size_t n : {2u, 3u, 5u, 8u}) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.uniform(-1.0, 1.0);
        std::vector<double> flat(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) flat[i * n + j] = a(i, j);
        const SymmetricEigen e = symmetric_eigen(flat, n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
        for (std::size_t k = 0; k < n; ++k) {
            EXPECT_NEAR(e.values[k], es.eigenvalues()(static_cast<Eigen::Index>(n - 1 - k)), 1e-10);
            // A v = lambda v for the returned vector.
            Eigen::VectorXd v(n);
            for (std::size_t i = 0; i < n; ++i) v(i) = e.vectors[k * n + i];
            EXPECT_LT((a * v - e.values[k] * v).norm(), 1e-10);
        }
    }
}

TEST(Subsample, CapAndOrder) {
    const auto idx = subsample_frames(500, kDefaultSubsample, 9);
    ASSERT_EQ(idx.size(), 120u);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 120u);
    EXPECT_LT(idx.back(), 500u);
}

TEST(Subsample, ShortClipsKeepEveryFrame) {
    const auto idx = subsample_frames(40, 120, 10);
    ASSERT_EQ(idx.size(), 40u);
    for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(idx[i], i);
    EXPECT_EQ(subsample_frames(120, 120, 10).size(), 120u);
}

TEST(Subsample, DeterministicInSeed) {
    EXPECT_EQ(subsample_frames(300, 120, 11), subsample_frames(300, 120, 11));
    EXPECT_NE(subsample_frames(300, 120, 11), subsample_frames(300, 120, 12));
    EXPECT_THROW(subsample_frames(0, 10, 1), InvalidArgument);
}

TEST(FaceMask, KeepsOnlyBoxPixels) {
    Rng rng(13);
    const Tensor frame = rng.uniform_tensor({3, 16, 16}, 0.1, 1.0);
    const FaceBoxes boxes{{2, 2, 5, 4}, {9, 2, 12, 4}, {5, 8, 11, 11}};
    const Tensor out = face_region_mask(frame, boxes);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const double v = out[(c * 16 + y) * 16 + x];
                if (boxes.covers(x, y)) EXPECT_EQ(v, frame[(c * 16 + y) * 16 + x]);
                else EXPECT_EQ(v, 0.0);
            }
}

TEST(FaceMask, AppliesToEveryFrameOfAClip) {
    Rng rng(14);
    const Tensor clip = rng.uniform_tensor({3, 4, 8, 8}, 0.0, 1.0);
    const FaceBoxes boxes{{0, 0, 2, 2}, {6, 0, 8, 2}, {2, 5, 6, 7}};
    const Tensor out = face_region_mask(clip, boxes);
    for (std::size_t f = 0; f < 4; ++f) {
        const Tensor frame = slice_frames(clip, f, 1).reshaped({3, 8, 8});
        EXPECT_TRUE(slice_frames(out, f, 1).reshaped({3, 8, 8}) == face_region_mask(frame, boxes));
    }
}

TEST(FaceMask, RejectsInvalidBoxes) {
    const Tensor frame({3, 8, 8}, 0.5);
    EXPECT_THROW(face_region_mask(frame, FaceBoxes{{0, 0, 9, 2}, {0, 0, 1, 1}, {0, 0, 1, 1}}), InvalidArgument);
    EXPECT_THROW(face_region_mask(frame, FaceBoxes{{3, 0, 3, 2}, {0, 0, 1, 1}, {0, 0, 1, 1}}), InvalidArgument);
}
