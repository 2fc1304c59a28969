#pragma once

#include <filesystem>
#include <string>

#include "signdiff/sgt_io.hpp"
#include "signdiff/tensor.hpp"

namespace signdiff {

/// One training sample. Maps and the target clip are (c_img, t, H, W); the
/// reference image is (c_img, H, W). Pixel values lie in [0, 1].
struct ModalityBundle {
    Tensor pose_map;
    Tensor hand_map;
    Tensor face_map;
    Tensor reference_image;
    Tensor target_clip;

    std::size_t frames() const { return target_clip.dim(1); }

    void validate() const {
        require_feature(target_clip, "ModalityBundle target_clip");
        for (const Tensor* m : {&pose_map, &hand_map, &face_map})
            if (m->shape() != target_clip.shape())
                throw InvalidArgument("ModalityBundle: modality map " + shape_str(m->shape()) +
                                      " does not match target clip " + shape_str(target_clip.shape()));
        if (reference_image.rank() != 3 || reference_image.dim(0) != target_clip.dim(0) ||
            reference_image.dim(1) != target_clip.dim(2) || reference_image.dim(2) != target_clip.dim(3))
            throw InvalidArgument("ModalityBundle: reference image " + shape_str(reference_image.shape()) +
                                  " incompatible with clip " + shape_str(target_clip.shape()));
        for (const Tensor* m : {&pose_map, &hand_map, &face_map, &reference_image, &target_clip})
            for (double v : m->data())
                if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("ModalityBundle: pixel values must lie in [0, 1]");
    }

    // Frames [begin, begin + count) of every clip-shaped member.
    ModalityBundle frames_slice(std::size_t begin, std::size_t count) const {
        return {slice_frames(pose_map, begin, count), slice_frames(hand_map, begin, count),
                slice_frames(face_map, begin, count), reference_image, slice_frames(target_clip, begin, count)};
    }
};

inline void save_bundle(const std::filesystem::path& dir, const ModalityBundle& b) {
    std::filesystem::create_directories(dir);
    save_sgt(dir / "pose_map.sgt", b.pose_map);
    save_sgt(dir / "hand_map.sgt", b.hand_map);
    save_sgt(dir / "face_map.sgt", b.face_map);
    save_sgt(dir / "reference_image.sgt", b.reference_image);
    save_sgt(dir / "target_clip.sgt", b.target_clip);
}

inline ModalityBundle load_bundle(const std::filesystem::path& dir) {
    ModalityBundle b{load_sgt(dir / "pose_map.sgt"), load_sgt(dir / "hand_map.sgt"), load_sgt(dir / "face_map.sgt"),
                     load_sgt(dir / "reference_image.sgt"), load_sgt(dir / "target_clip.sgt")};
    b.validate();
    return b;
}

}  // namespace signdiff
