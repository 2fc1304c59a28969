#pragma once

// Frozen latent codec: every p x p x c_img pixel patch is multiplied by a
// fixed orthonormal matrix (separable DCT-II over colour, rows and columns).
// With the full c_lat = p*p*c_img rows the map is an exact isometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "signdiff/tensor.hpp"

namespace signdiff {

inline std::vector<double> dct_matrix(std::size_t n) {
    std::vector<double> d(n * n);
    for (std::size_t k = 0; k < n; ++k) {
        const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            d[k * n + i] = scale * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) *
                                            static_cast<double>(k) / (2.0 * static_cast<double>(n)));
    }
    return d;
}

class LatentCodec {
public:
    LatentCodec() = default;

    LatentCodec(std::size_t image_channels, std::size_t patch, std::size_t latent_channels = 0)
        : image_channels_(image_channels), patch_(patch) {
        require(image_channels > 0 && patch > 0, "LatentCodec: channels and patch must be positive");
        const std::size_t full = patch * patch * image_channels;
        latent_channels_ = latent_channels == 0 ? full : latent_channels;
        require(latent_channels_ <= full, "LatentCodec: latent channels exceed patch dimension");

        const auto dc = dct_matrix(image_channels);
        const auto dp = dct_matrix(patch);
        // Rows ordered by total frequency so truncation keeps the smoothest atoms.
        std::vector<std::array<std::size_t, 3>> atoms;
        for (std::size_t kc = 0; kc < image_channels; ++kc)
            for (std::size_t ky = 0; ky < patch; ++ky)
                for (std::size_t kx = 0; kx < patch; ++kx) atoms.push_back({kc, ky, kx});
        std::stable_sort(atoms.begin(), atoms.end(), [](const auto& a, const auto& b) {
            return a[0] + a[1] + a[2] < b[0] + b[1] + b[2];
        });
        basis_.assign(latent_channels_ * full, 0.0);
        for (std::size_t r = 0; r < latent_channels_; ++r) {
            const auto [kc, ky, kx] = atoms[r];
            for (std::size_t c = 0; c < image_channels; ++c)
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        basis_[r * full + (c * patch + y) * patch + x] =
                            dc[kc * image_channels + c] * dp[ky * patch + y] * dp[kx * patch + x];
        }
    }

    std::size_t image_channels() const noexcept { return image_channels_; }
    std::size_t patch() const noexcept { return patch_; }
    std::size_t latent_channels() const noexcept { return latent_channels_; }
    std::size_t patch_dim() const noexcept { return patch_ * patch_ * image_channels_; }
    const std::vector<double>& basis() const noexcept { return basis_; }

    /// Image (c, H, W) or clip (c, t, H, W) to latent (c_lat, [t,] H/p, W/p).
    Tensor encode(const Tensor& x) const {
        const Tensor clip = as_clip(x);
        require(clip.dim(0) == image_channels_, "codec encode: expected " + std::to_string(image_channels_) +
                                                    " channels, got " + std::to_string(clip.dim(0)));
        if (clip.dim(2) % patch_ != 0 || clip.dim(3) % patch_ != 0)
            throw InvalidArgument("codec encode: extents " + std::to_string(clip.dim(2)) + "x" +
                                  std::to_string(clip.dim(3)) + " not divisible by patch " + std::to_string(patch_));
        const std::size_t T = clip.dim(1), h = clip.dim(2) / patch_, w = clip.dim(3) / patch_;
        const std::size_t full = patch_dim();
        Tensor z({latent_channels_, T, h, w});
        std::vector<double> v(full);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    gather(clip, t, i, j, v);
                    for (std::size_t r = 0; r < latent_channels_; ++r) {
                        double acc = 0.0;
                        for (std::size_t k = 0; k < full; ++k) acc += basis_[r * full + k] * v[k];
                        z.at(r, t, i, j) = acc;
                    }
                }
        return x.rank() == 3 ? std::move(z).reshaped({latent_channels_, h, w}) : z;
    }

    Tensor decode(const Tensor& z) const {
        const Tensor lat = as_clip(z);
        require(lat.dim(0) == latent_channels_, "codec decode: expected " + std::to_string(latent_channels_) +
                                                    " latent channels, got " + std::to_string(lat.dim(0)));
        const std::size_t T = lat.dim(1), h = lat.dim(2), w = lat.dim(3);
        const std::size_t full = patch_dim();
        Tensor x({image_channels_, T, h * patch_, w * patch_});
        std::vector<double> v(full);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    std::fill(v.begin(), v.end(), 0.0);
                    for (std::size_t r = 0; r < latent_channels_; ++r) {
                        const double a = lat.at(r, t, i, j);
                        for (std::size_t k = 0; k < full; ++k) v[k] += basis_[r * full + k] * a;
                    }
                    scatter(x, t, i, j, v);
                }
        return z.rank() == 3 ? std::move(x).reshaped({image_channels_, h * patch_, w * patch_}) : x;
    }

private:
    // Patch vector index = (channel * p + dy) * p + dx.
    void gather(const Tensor& clip, std::size_t t, std::size_t i, std::size_t j, std::vector<double>& v) const {
        for (std::size_t c = 0; c < image_channels_; ++c)
            for (std::size_t y = 0; y < patch_; ++y)
                for (std::size_t x = 0; x < patch_; ++x)
                    v[(c * patch_ + y) * patch_ + x] = clip.at(c, t, i * patch_ + y, j * patch_ + x);
    }
    void scatter(Tensor& clip, std::size_t t, std::size_t i, std::size_t j, const std::vector<double>& v) const {
        for (std::size_t c = 0; c < image_channels_; ++c)
            for (std::size_t y = 0; y < patch_; ++y)
                for (std::size_t x = 0; x < patch_; ++x)
                    clip.at(c, t, i * patch_ + y, j * patch_ + x) = v[(c * patch_ + y) * patch_ + x];
    }

    std::size_t image_channels_ = 0;
    std::size_t patch_ = 0;
    std::size_t latent_channels_ = 0;
    std::vector<double> basis_;  // (latent_channels, patch_dim)
};

}  // namespace signdiff
