#pragma once

// Deterministic sign-like clips: a static figure with a fixed face box whose
// mouth opens and closes, and two Gaussian hand blobs on elliptical paths.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "signdiff/bundle.hpp"
#include "signdiff/preprocess.hpp"
#include "signdiff/rng.hpp"

namespace signdiff {

struct HandTrajectory {
    double center_x = 0.0, center_y = 0.0;  // pixels
    double radius_x = 0.0, radius_y = 0.0;
    double angular_speed = 0.0;  // radians per frame
    double phase = 0.0;
    double sigma = 1.5;

    double x(std::size_t t) const { return center_x + radius_x * std::cos(angular_speed * static_cast<double>(t) + phase); }
    double y(std::size_t t) const { return center_y + radius_y * std::sin(angular_speed * static_cast<double>(t) + phase); }
};

struct SyntheticClipSpec {
    std::size_t image_size = 32;
    std::size_t frames = 8;
    std::vector<HandTrajectory> hands{{9.0, 20.0, 3.0, 4.0, 0.6, 0.0, 1.5}, {23.0, 20.0, 3.0, 4.0, -0.5, 1.0, 1.5}};
    double face_amplitude = 1.5;  // extra mouth opening in pixels at the peak
    double face_period = 6.0;     // frames
    std::array<double, 3> background{0.15, 0.2, 0.25};
    std::uint64_t seed = 0;
};

/// Pixel extent of the 0.5-level set of a unit-peak Gaussian blob.
inline double blob_mask_radius(double sigma) { return sigma * std::sqrt(2.0 * std::numbers::ln2); }

/// Face layout scaled to the frame size.
inline FaceBoxes synthetic_face_boxes(std::size_t size) {
    const auto s = [size](double f) { return static_cast<std::size_t>(std::lround(f * static_cast<double>(size))); };
    return {{s(0.375), s(0.1875), s(0.4375), s(0.25)},
            {s(0.5625), s(0.1875), s(0.625), s(0.25)},
            {s(0.40625), s(0.3125), s(0.59375), s(0.4375)}};
}

namespace detail {

inline void check_spec(const SyntheticClipSpec& s) {
    require(s.image_size >= 16 && s.frames >= 1, "synthetic spec: need image_size >= 16 and frames >= 1");
    require(s.face_amplitude >= 0.0 && s.face_period > 0.0, "synthetic spec: invalid face oscillation");
    require(!s.hands.empty(), "synthetic spec: at least one hand trajectory");
    const double last = static_cast<double>(s.image_size - 1);
    for (std::size_t i = 0; i < s.hands.size(); ++i) {
        const auto& h = s.hands[i];
        require(h.sigma > 0.0, "synthetic spec: blob sigma must be positive");
        const double r = blob_mask_radius(h.sigma);
        for (std::size_t t = 0; t < s.frames; ++t) {
            const double x = h.x(t), y = h.y(t);
            if (x - r < 0.0 || x + r > last || y - r < 0.0 || y + r > last)
                throw InvalidArgument("synthetic spec: hand " + std::to_string(i) + " leaves the frame at t=" +
                                      std::to_string(t));
        }
    }
}

inline double gaussian(double dx, double dy, double sigma) {
    return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

}  // namespace detail

/// Everything the renderer knows about a clip: the bundle plus the upstream
/// annotations a real pipeline would receive from detectors.
struct SyntheticClip {
    ModalityBundle bundle;
    Tensor person_mask;                         // (1, t, H, W), 1 on the figure
    std::vector<std::vector<Box>> hand_boxes;   // per frame, per hand
    FaceBoxes face_boxes;
};

/// Integer box enclosing the 0.5-level set of a blob, padded by one pixel.
inline Box hand_box(const HandTrajectory& h, std::size_t t, std::size_t size) {
    const double r = blob_mask_radius(h.sigma) + 1.0;
    auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::floor(v))); };
    auto hi = [size](double v) { return std::min(size, static_cast<std::size_t>(std::ceil(v)) + 1); };
    return {lo(h.x(t) - r), lo(h.y(t) - r), hi(h.x(t) + r), hi(h.y(t) + r)};
}

/// Renders the target clip, its derived modality maps and annotations.
inline SyntheticClip generate_synthetic_clip(const SyntheticClipSpec& spec) {
    detail::check_spec(spec);
    const std::size_t S = spec.image_size, T = spec.frames;
    const double Sd = static_cast<double>(S);
    Rng rng(spec.seed);
    // Per-seed appearance: skin, shirt and hand colours jittered around fixed tones.
    const std::array<double, 3> skin{0.85 + rng.uniform(-0.05, 0.05), 0.7 + rng.uniform(-0.05, 0.05), 0.55};
    const std::array<double, 3> shirt{0.25, 0.35 + rng.uniform(-0.1, 0.1), 0.7 + rng.uniform(-0.1, 0.1)};
    const std::array<double, 3> hand_colour{0.95, 0.8 + rng.uniform(-0.05, 0.05), 0.65};
    const std::array<double, 3> feature{0.1, 0.05, 0.05};
    const FaceBoxes boxes = synthetic_face_boxes(S);
    const std::size_t face_x0 = boxes.left_eye.x0 - 1, face_x1 = boxes.right_eye.x1 + 1;
    const std::size_t face_y0 = boxes.left_eye.y0 - 2, face_y1 = boxes.mouth.y1 + 1;

    Tensor clip({3, T, S, S}), face_layer({3, T, S, S}), pose({3, T, S, S}), hand({3, T, S, S});
    Tensor person({1, T, S, S});
    for (std::size_t t = 0; t < T; ++t) {
        const double open = spec.face_amplitude * 0.5 *
                            (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / spec.face_period));
        const double mouth_h = 1.0 + open;
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                std::array<double, 3> px = spec.background;
                const bool in_torso = y >= S * 5 / 8 && x >= S / 4 && x < S * 3 / 4;
                if (in_torso) px = shirt;
                const bool in_face = x >= face_x0 && x < face_x1 && y >= face_y0 && y < face_y1;
                if (in_face) px = skin;
                if (boxes.left_eye.contains(x, y) || boxes.right_eye.contains(x, y)) px = feature;
                if (boxes.mouth.contains(x, y) && x > boxes.mouth.x0 && x + 1 < boxes.mouth.x1) {
                    // Fractional coverage of the mouth opening, top edge fixed.
                    const double cover = std::clamp(mouth_h - static_cast<double>(y - boxes.mouth.y0), 0.0, 1.0);
                    for (int c = 0; c < 3; ++c) px[c] = (1.0 - cover) * px[c] + cover * feature[c];
                }
                for (std::size_t c = 0; c < 3; ++c) face_layer.at(c, t, y, x) = px[c];

                double mask = 0.0;
                for (const auto& h : spec.hands) {
                    const double g = detail::gaussian(static_cast<double>(x) - h.x(t), static_cast<double>(y) - h.y(t), h.sigma);
                    for (int c = 0; c < 3; ++c) px[c] = (1.0 - g) * px[c] + g * hand_colour[c];
                    if (g >= 0.5) mask = 1.0;
                }
                for (std::size_t c = 0; c < 3; ++c) {
                    clip.at(c, t, y, x) = px[c];
                    hand.at(c, t, y, x) = mask;
                }
                person.at(0, t, y, x) = (in_torso || in_face || mask > 0.0) ? 1.0 : 0.0;
            }
        // Pose keypoints: one channel per hand, static upper-body joints in the last.
        const double kp_sigma = 1.0;
        const std::vector<std::array<double, 2>> joints{
            {0.5 * Sd, 0.5 * Sd}, {0.3 * Sd, 0.62 * Sd}, {0.7 * Sd, 0.62 * Sd}, {0.5 * Sd, 0.3 * Sd}};
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                const double fx = static_cast<double>(x), fy = static_cast<double>(y);
                for (std::size_t i = 0; i < std::min<std::size_t>(2, spec.hands.size()); ++i)
                    pose.at(i, t, y, x) = detail::gaussian(fx - spec.hands[i].x(t), fy - spec.hands[i].y(t), kp_sigma);
                double j = 0.0;
                for (const auto& p : joints) j = std::max(j, detail::gaussian(fx - p[0], fy - p[1], kp_sigma));
                pose.at(2, t, y, x) = j;
            }
    }

    SyntheticClip out;
    ModalityBundle& b = out.bundle;
    b.target_clip = std::move(clip);
    b.pose_map = std::move(pose);
    b.hand_map = std::move(hand);
    b.face_map = face_region_mask(face_layer, boxes);
    b.reference_image = slice_frames(b.target_clip, 0, 1).reshaped({3, S, S});
    b.validate();
    out.person_mask = std::move(person);
    out.face_boxes = boxes;
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<Box> frame_boxes;
        for (const auto& h : spec.hands) frame_boxes.push_back(hand_box(h, t, S));
        out.hand_boxes.push_back(std::move(frame_boxes));
    }
    return out;
}

inline ModalityBundle generate_synthetic_bundle(const SyntheticClipSpec& spec) {
    return generate_synthetic_clip(spec).bundle;
}

}  // namespace signdiff
