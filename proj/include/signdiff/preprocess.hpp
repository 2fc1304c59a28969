#pragma once

// Per-clip preprocessing: frame subsampling, single-component PCA of hand
// crops, and eye/mouth box masking of face frames.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "signdiff/rng.hpp"
#include "signdiff/tensor.hpp"

namespace signdiff {

inline constexpr std::size_t kDefaultSubsample = 120;

/// min(N, frames) distinct indices drawn uniformly without replacement, ascending.
inline std::vector<std::size_t> subsample_frames(std::size_t frames, std::size_t n, std::uint64_t seed) {
    require(frames > 0, "subsample_frames: empty clip");
    std::vector<std::size_t> all(frames);
    for (std::size_t i = 0; i < frames; ++i) all[i] = i;
    if (n >= frames) return all;
    std::vector<std::size_t> picked;
    picked.reserve(n);
    Rng rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(picked), n, rng.engine());
    std::sort(picked.begin(), picked.end());
    return picked;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

struct SymmetricEigen {
    std::vector<double> values;   // descending
    std::vector<double> vectors;  // row k is the eigenvector of values[k]
};

inline SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n) {
    require(a.size() == n * n && n > 0, "symmetric_eigen: matrix must be n x n");
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a[i * n + j] * a[i * n + j];
                if (i != j) off += a[i * n + j] * a[i * n + j];
            }
        if (off <= 1e-32 * total || off == 0.0) break;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
    SymmetricEigen e;
    for (std::size_t r = 0; r < n; ++r) {
        e.values.push_back(a[order[r] * n + order[r]]);
        for (std::size_t k = 0; k < n; ++k) e.vectors.push_back(v[k * n + order[r]]);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Hand PCA

/// Pixel block (h, w, c), channel-last, around one detected hand.
struct HandCrop {
    Tensor pixels;
    std::size_t frame = 0;
};

struct HandPca {
    Tensor projection;               // (h, w, 1)
    std::vector<double> mean;        // per channel
    std::vector<double> component;   // unit length, largest-magnitude entry positive
    double eigenvalue = 0.0;
    bool degenerate = false;

    /// mean + projection * component, shaped (h, w, c).
    Tensor reconstruct() const {
        const std::size_t h = projection.dim(0), w = projection.dim(1), c = mean.size();
        Tensor out({h, w, c});
        for (std::size_t i = 0; i < h * w; ++i)
            for (std::size_t k = 0; k < c; ++k) out[i * c + k] = mean[k] + projection[i] * component[k];
        return out;
    }
};

inline HandPca pca_hand_reduce(const HandCrop& crop) {
    const Tensor& x = crop.pixels;
    require(x.rank() == 3, "pca_hand_reduce: crop must be (h, w, c), got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0) * x.dim(1), c = x.dim(2);
    require(n >= 2, "pca_hand_reduce: crop needs at least two pixels");
    for (double v : x.data())
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("pca_hand_reduce: pixel values must lie in [0, 1]");

    HandPca r;
    r.mean.assign(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) r.mean[k] += x[i * c + k];
    for (double& m : r.mean) m /= static_cast<double>(n);

    // Population covariance of the (h*w) x c pixel matrix.
    std::vector<double> cov(c * c, 0.0);
    std::vector<double> d(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) d[k] = x[i * c + k] - r.mean[k];
        for (std::size_t a = 0; a < c; ++a)
            for (std::size_t b = 0; b < c; ++b) cov[a * c + b] += d[a] * d[b];
    }
    double scale = 0.0;
    for (double& v : cov) {
        v /= static_cast<double>(n);
        scale = std::max(scale, std::abs(v));
    }

    r.projection = Tensor({x.dim(0), x.dim(1), 1});
    r.component.assign(c, 0.0);
    if (scale <= 1e-24) {
        r.degenerate = true;
        return r;
    }
    const auto e = symmetric_eigen(cov, c);
    r.eigenvalue = e.values[0];
    r.component.assign(e.vectors.begin(), e.vectors.begin() + static_cast<std::ptrdiff_t>(c));
    std::size_t big = 0;
    for (std::size_t k = 1; k < c; ++k)
        if (std::abs(r.component[k]) > std::abs(r.component[big])) big = k;
    if (r.component[big] < 0)
        for (double& v : r.component) v = -v;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c; ++k) acc += (x[i * c + k] - r.mean[k]) * r.component[k];
        r.projection[i] = acc;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Face masking

/// Half-open pixel box [x0, x1) x [y0, y1).
struct Box {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

struct FaceBoxes {
    Box left_eye;
    Box right_eye;
    Box mouth;

    std::array<Box, 3> all() const { return {left_eye, right_eye, mouth}; }

    void validate(std::size_t height, std::size_t width) const {
        for (const Box& b : all()) {
            if (!(b.x0 < b.x1 && b.y0 < b.y1))
                throw InvalidArgument("FaceBoxes: box must satisfy x0 < x1 and y0 < y1");
            if (b.x1 > width || b.y1 > height)
                throw InvalidArgument("FaceBoxes: box (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                                      std::to_string(b.x1) + "," + std::to_string(b.y1) + ") outside " +
                                      std::to_string(width) + "x" + std::to_string(height) + " frame");
        }
    }

    bool covers(std::size_t x, std::size_t y) const {
        for (const Box& b : all())
            if (b.contains(x, y)) return true;
        return false;
    }
};

/// Keeps pixels inside any box and zeroes the rest. Accepts (c, H, W) frames
/// and (c, t, H, W) clips.
inline Tensor face_region_mask(const Tensor& frame, const FaceBoxes& boxes) {
    require(frame.rank() == 3 || frame.rank() == 4, "face_region_mask: expected rank 3 or 4");
    const std::size_t H = frame.dim(frame.rank() - 2), W = frame.dim(frame.rank() - 1);
    boxes.validate(H, W);
    Tensor out = frame;
    const std::size_t planes = frame.size() / (H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            if (boxes.covers(x, y)) continue;
            for (std::size_t p = 0; p < planes; ++p) out[(p * H + y) * W + x] = 0.0;
        }
    return out;
}

}  // namespace signdiff
