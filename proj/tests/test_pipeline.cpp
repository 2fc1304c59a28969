#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "signdiff/pipeline.hpp"

using namespace signdiff;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("signdiff_test_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

RunConfig tiny_run(const fs::path& root) {
    RunConfig c;
    c.data_dir = (root / "data").string();
    c.out_dir = (root / "out").string();
    c.model.unet_base = 8;
    c.model.unet_wide = 8;
    c.model.feature_channels = 4;
    c.model.app_dim = 4;
    c.model.app_hidden = 4;
    c.model.diffusion_steps = 20;
    c.data.frames = 6;
    c.phase1.iterations = 3;
    c.phase1.batch_size = 2;
    c.phase2.iterations = 2;
    c.phase2.batch_size = 1;
    c.phase2.clip_length = 4;
    c.validate();
    return c;
}

}  // namespace

TEST(Png, RoundTripQuantizesToEightBits) {
    const fs::path dir = scratch("png");
    fs::create_directories(dir);
    Rng rng(1);
    const Tensor img = rng.uniform_tensor({3, 5, 7}, 0.0, 1.0);
    write_png(dir / "a.png", img);
    const Tensor back = read_png(dir / "a.png");
    EXPECT_EQ(back.shape(), img.shape());
    EXPECT_LE(max_abs_diff(back, img), 0.5 / 255.0 + 1e-12);

    const Tensor gray = rng.uniform_tensor({1, 4, 4}, 0.0, 1.0);
    write_png(dir / "g.png", gray);
    const Tensor g3 = read_png(dir / "g.png");
    ASSERT_EQ(g3.shape(), (Shape{3, 4, 4}));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(g3[i], g3[32 + i]);
    EXPECT_THROW(read_png(dir / "missing.png"), IoError);
    fs::remove_all(dir);
}

TEST(Synth, RawClipLayout) {
    const fs::path root = scratch("synth");
    const RunConfig cfg = tiny_run(root);
    const auto dirs = run_synth(cfg);
    ASSERT_EQ(dirs.size(), 1u);
    const RawClip raw = read_raw_manifest(dirs[0]);
    EXPECT_EQ(raw.frames, 6u);
    EXPECT_EQ(raw.height, 32u);
    EXPECT_EQ(raw.hand_boxes.size(), 6u);
    for (const char* sub : {"frames", "pose", "person_mask"})
        EXPECT_TRUE(fs::exists(dirs[0] / sub / "frame_0005.png")) << sub;
    fs::remove_all(root);
}

TEST(Synth, ClipsDifferBySeed) {
    RunConfig cfg;
    const auto a = synthetic_spec(cfg, 0), b = synthetic_spec(cfg, 1);
    EXPECT_NE(a.seed, b.seed);
    EXPECT_NE(a.hands[0].phase, b.hands[0].phase);
    EXPECT_EQ(synthetic_spec(cfg, 0).seed, a.seed);
}

TEST(Preprocess, BundleFromRawClip) {
    const fs::path root = scratch("prep");
    RunConfig cfg = tiny_run(root);
    cfg.data.frames = 10;
    const auto dirs = run_synth(cfg);
    const auto r = preprocess_clip(dirs[0], 5, 4);
    ASSERT_EQ(r.indices.size(), 4u);
    EXPECT_EQ(r.indices, subsample_frames(10, 4, 5));
    EXPECT_EQ(r.bundle.frames(), 4u);
    EXPECT_NO_THROW(r.bundle.validate());

    // Target is the masked frame; the reference is its first frame.
    const std::size_t src = r.indices[1];
    const Tensor frame = read_png(dirs[0] / "frames" / detail::frame_png(src));
    const Tensor mask = read_png(dirs[0] / "person_mask" / detail::frame_png(src));
    const Tensor got = detail::frame_of(r.bundle.target_clip, 1);
    for (std::size_t i = 0; i < 32 * 32; ++i) EXPECT_DOUBLE_EQ(got[i], frame[i] * mask[i]);
    EXPECT_TRUE(r.bundle.reference_image == detail::frame_of(r.bundle.target_clip, 0));

    // Face map is zero outside the boxes.
    const RawClip raw = read_raw_manifest(dirs[0]);
    const Tensor face = detail::frame_of(r.bundle.face_map, 2);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            if (!raw.face_boxes.covers(x, y)) {
                EXPECT_EQ(face[y * 32 + x], 0.0);
            }

    EXPECT_EQ(r.sidecar.at("indices").size(), 4u);
    EXPECT_EQ(r.sidecar.at("hand_bases").size(), 4u * raw.hand_boxes[0].size());
    fs::remove_all(root);
}

TEST(Preprocess, HandChannelStaysInsideBoxes) {
    Rng rng(3);
    const Tensor frame = rng.uniform_tensor({3, 16, 16}, 0.0, 1.0);
    const std::vector<Box> boxes{{1, 1, 5, 6}, {9, 8, 14, 13}};
    Json bases = Json::array();
    const Tensor h = hand_channel(frame, boxes, 0, bases);
    ASSERT_EQ(bases.size(), 2u);
    double hi = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            const bool inside = boxes[0].contains(x, y) || boxes[1].contains(x, y);
            const double v = h[y * 16 + x];
            if (!inside) {
                EXPECT_EQ(v, 0.0);
            }
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            hi = std::max(hi, v);
            EXPECT_EQ(h[256 + y * 16 + x], v);
            EXPECT_EQ(h[512 + y * 16 + x], v);
        }
    EXPECT_DOUBLE_EQ(hi, 1.0);
}

TEST(Preprocess, Deterministic) {
    const fs::path root = scratch("prep_det");
    const RunConfig cfg = tiny_run(root);
    run_synth(cfg);
    const auto a = run_preprocess(cfg, "fp");
    const std::string first = slurp(a[0] / "preprocess.json") + slurp(a[0] / "hand_map.sgt");
    run_preprocess(cfg, "fp");
    EXPECT_EQ(first, slurp(a[0] / "preprocess.json") + slurp(a[0] / "hand_map.sgt"));
    fs::remove_all(root);
}

TEST(Preprocess, MalformedManifestRejected) {
    const fs::path root = scratch("bad_manifest");
    fs::create_directories(root);
    detail::write_text(root / "manifest.json", R"({"frames": 2, "height": 8, "width": 8})");
    EXPECT_THROW(read_raw_manifest(root), IoError);
    detail::write_text(root / "manifest.json",
                       R"({"frames": 1, "height": 8, "width": 8,
                          "face_boxes": {"left_eye": [0,0,2,2], "right_eye": [4,0,6,2], "mouth": [2,4,6,9]},
                          "hand_boxes": [[]]})");
    EXPECT_THROW(read_raw_manifest(root), InvalidArgument);
    fs::remove_all(root);
}

TEST(EndToEnd, ReportsAreReproducible) {
    std::string reports[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path root = scratch("e2e" + std::to_string(run));
        const RunConfig cfg = tiny_run(root);
        const std::string fp = fingerprint(cfg);
        run_synth(cfg);
        run_preprocess(cfg, fp);
        const auto data = load_bundles(cfg.data_dir);
        run_train(cfg, 1, cfg.out_dir, data);
        run_sample(cfg, latest_checkpoint(cfg.out_dir), cfg.out_dir, fp);
        const fs::path stem = fs::path(cfg.out_dir) / "report";
        run_eval(cfg, fs::path(cfg.out_dir) / "samples", fs::path(cfg.data_dir) / "bundles", stem, "signdiff", fp);
        for (const char* ext : {".md", ".csv", ".json"}) reports[run] += slurp(fs::path(stem).replace_extension(ext));
        EXPECT_FALSE(reports[run].empty());
        fs::remove_all(root);
    }
    EXPECT_EQ(reports[0], reports[1]);
}

TEST(EndToEnd, PhaseTwoUsesPhaseOneCheckpoint) {
    const fs::path root = scratch("phase2");
    const RunConfig cfg = tiny_run(root);
    run_synth(cfg);
    run_preprocess(cfg, fingerprint(cfg));
    const auto data = load_bundles(cfg.data_dir);
    EXPECT_THROW(run_train(cfg, 2, cfg.out_dir, data), IoError);
    run_train(cfg, 1, cfg.out_dir, data);
    EXPECT_EQ(latest_checkpoint(cfg.out_dir), checkpoint_root(cfg.out_dir, 1) / "final");
    run_train(cfg, 2, cfg.out_dir, data);
    EXPECT_EQ(latest_checkpoint(cfg.out_dir), checkpoint_root(cfg.out_dir, 2) / "final");
    EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "logs" / "train_phase2.jsonl"));
    fs::remove_all(root);
}

TEST(Ablation, VariantTable) {
    const auto v = ablation_variants(CompositionConfig{});
    ASSERT_EQ(v.size(), 6u);
    EXPECT_EQ(v[0].label, "baseline");
    EXPECT_FALSE(v[0].composition.enable_motion || v[0].composition.enable_sapien);
    EXPECT_TRUE(v[1].composition.enable_motion && !v[1].composition.enable_sapien);
    EXPECT_TRUE(v[2].composition.enable_motion && v[2].composition.enable_sapien);
    EXPECT_EQ(v[3].label, "lambda=1");
    EXPECT_DOUBLE_EQ(v[4].composition.lambda, 0.1);
    EXPECT_DOUBLE_EQ(v[5].composition.lambda, 0.01);
}

TEST(Ablation, MissingCheckpointNeedsTrainFlag) {
    const fs::path root = scratch("ablate");
    const RunConfig cfg = tiny_run(root);
    run_synth(cfg);
    run_preprocess(cfg, fingerprint(cfg));
    try {
        run_ablate(cfg, cfg.out_dir, false);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("--train"), std::string::npos);
    }
    fs::remove_all(root);
}

TEST(Eval, MissingGroundTruthClip) {
    const fs::path root = scratch("eval");
    fs::create_directories(root / "pred" / "clip_000");
    fs::create_directories(root / "gt");
    save_sgt(root / "pred" / "clip_000" / "clip.sgt", Tensor({3, 1, 8, 8}));
    EXPECT_THROW(load_pairs(root / "pred", root / "gt"), IoError);
    fs::remove_all(root);
}
