#pragma once

// File-level pipeline behind the command-line tool: synthetic raw clips,
// preprocessing into bundles, training, sampling, evaluation and ablation.
//
// Layout under a data directory:
//   raw/clip_NNN/      frames/, pose/, person_mask/ PNGs plus manifest.json
//   bundles/clip_NNN/  ModalityBundle SGT files plus preprocess.json
// and under an output directory:
//   checkpoints/phase{1,2}/final, logs/train_phase{1,2}.jsonl,
//   samples/clip_NNN/, ablation/<fingerprint>/

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "signdiff/config.hpp"
#include "signdiff/png_io.hpp"
#include "signdiff/synthetic.hpp"

namespace signdiff {

namespace fs = std::filesystem;

// Tags for seeds derived from the run seed.
inline constexpr std::uint64_t kSeedSynth = 1;
inline constexpr std::uint64_t kSeedSubsample = 2;
inline constexpr std::uint64_t kSeedInit = 3;
inline constexpr std::uint64_t kSeedPhase1 = 4;
inline constexpr std::uint64_t kSeedPhase2 = 5;

namespace detail {

inline std::string indexed(const std::string& stem, std::size_t i, int width = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%0*zu", stem.c_str(), width, i);
    return buf;
}

inline std::string frame_png(std::size_t t) { return indexed("frame", t, 4) + ".png"; }

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

inline Json box_json(const Box& b) { return Json::array({b.x0, b.y0, b.x1, b.y1}); }

inline Box box_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 4) throw IoError("box must be [x0, y0, x1, y1]");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

/// Sorted subdirectories of `dir` whose name starts with `prefix`.
inline std::vector<fs::path> list_dirs(const fs::path& dir, const std::string& prefix = "clip_") {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && e.path().filename().string().rfind(prefix, 0) == 0) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no " + prefix + "* directories in " + dir.string());
    return out;
}

inline Tensor frame_of(const Tensor& clip, std::size_t t) {
    const std::size_t c = clip.dim(0), H = clip.dim(2), W = clip.dim(3);
    return slice_frames(clip, t, 1).reshaped({c, H, W});
}

inline void set_frame(Tensor& clip, std::size_t t, const Tensor& frame) {
    const std::size_t c = clip.dim(0), T = clip.dim(1), HW = clip.dim(2) * clip.dim(3);
    for (std::size_t k = 0; k < c; ++k)
        std::copy_n(frame.data().begin() + static_cast<std::ptrdiff_t>(k * HW), HW,
                    clip.data().begin() + static_cast<std::ptrdiff_t>((k * T + t) * HW));
}

inline void write_clip_pngs(const fs::path& dir, const Tensor& clip) {
    fs::create_directories(dir);
    for (std::size_t t = 0; t < clip.dim(1); ++t) write_png(dir / frame_png(t), frame_of(clip, t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

/// Spec of synthetic clip `i`: colours and hand phases vary with the seed.
inline SyntheticClipSpec synthetic_spec(const RunConfig& cfg, std::size_t i) {
    SyntheticClipSpec s;
    s.image_size = cfg.model.image_size;
    s.frames = cfg.data.frames;
    s.face_amplitude = cfg.data.face_amplitude;
    s.seed = derived_seed(derived_seed(cfg.seed, kSeedSynth), i);
    const double scale = static_cast<double>(s.image_size) / 32.0;
    Rng rng(s.seed ^ 0x5eedULL);
    for (auto& h : s.hands) {
        h.center_x *= scale;
        h.center_y *= scale;
        h.radius_x *= scale;
        h.radius_y *= scale;
        h.phase += rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return s;
}

/// Writes one raw clip directory: frames, pose renderings, person masks,
/// and a manifest with face and hand boxes.
inline void write_raw_clip(const fs::path& dir, const SyntheticClip& c) {
    const ModalityBundle& b = c.bundle;
    detail::write_clip_pngs(dir / "frames", b.target_clip);
    detail::write_clip_pngs(dir / "pose", b.pose_map);
    detail::write_clip_pngs(dir / "person_mask", c.person_mask);
    Json hands = Json::array();
    for (const auto& frame : c.hand_boxes) {
        Json row = Json::array();
        for (const Box& box : frame) row.push_back(detail::box_json(box));
        hands.push_back(row);
    }
    const Json manifest{{"frames", b.frames()},
                        {"height", b.target_clip.dim(2)},
                        {"width", b.target_clip.dim(3)},
                        {"face_boxes",
                         {{"left_eye", detail::box_json(c.face_boxes.left_eye)},
                          {"right_eye", detail::box_json(c.face_boxes.right_eye)},
                          {"mouth", detail::box_json(c.face_boxes.mouth)}}},
                        {"hand_boxes", hands}};
    detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::vector<fs::path> run_synth(const RunConfig& cfg) {
    std::vector<fs::path> dirs;
    for (std::size_t i = 0; i < cfg.data.clips; ++i) {
        const fs::path dir = fs::path(cfg.data_dir) / "raw" / detail::indexed("clip", i);
        write_raw_clip(dir, generate_synthetic_clip(synthetic_spec(cfg, i)));
        dirs.push_back(dir);
    }
    return dirs;
}

// ---------------------------------------------------------------------------
// preprocess

struct RawClip {
    std::size_t frames = 0, height = 0, width = 0;
    FaceBoxes face_boxes;
    std::vector<std::vector<Box>> hand_boxes;  // per frame
};

inline RawClip read_raw_manifest(const fs::path& dir) {
    const Json j = read_json_file(dir / "manifest.json");
    RawClip r;
    try {
        r.frames = j.at("frames").get<std::size_t>();
        r.height = j.at("height").get<std::size_t>();
        r.width = j.at("width").get<std::size_t>();
        const Json& f = j.at("face_boxes");
        r.face_boxes = {detail::box_from_json(f.at("left_eye")), detail::box_from_json(f.at("right_eye")),
                        detail::box_from_json(f.at("mouth"))};
        for (const auto& frame : j.at("hand_boxes")) {
            std::vector<Box> boxes;
            for (const auto& b : frame) boxes.push_back(detail::box_from_json(b));
            r.hand_boxes.push_back(std::move(boxes));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed raw clip manifest in " + dir.string() + ": " + e.what());
    }
    if (r.frames == 0) throw InvalidArgument("raw clip " + dir.string() + " has no frames");
    if (r.hand_boxes.size() != r.frames)
        throw IoError("raw clip manifest in " + dir.string() + ": hand_boxes must list every frame");
    r.face_boxes.validate(r.height, r.width);
    for (const auto& frame : r.hand_boxes)
        for (const Box& b : frame)
            if (!(b.x0 < b.x1 && b.y0 < b.y1 && b.x1 <= r.width && b.y1 <= r.height))
                throw InvalidArgument("raw clip manifest in " + dir.string() + ": hand box outside frame");
    return r;
}

/// Hand channel of one frame: each hand box is reduced to its first
/// principal component, min-max scaled to [0, 1] and pasted into a zero map
/// that is repeated across the image channels.
inline Tensor hand_channel(const Tensor& frame, const std::vector<Box>& boxes, std::size_t frame_index,
                           Json& bases) {
    const std::size_t c = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    Tensor out({c, H, W});
    for (const Box& b : boxes) {
        const std::size_t h = b.y1 - b.y0, w = b.x1 - b.x0;
        HandCrop crop{Tensor({h, w, c}), frame_index};
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t k = 0; k < c; ++k) crop.pixels[(y * w + x) * c + k] = frame[(k * H + b.y0 + y) * W + b.x0 + x];
        const HandPca p = pca_hand_reduce(crop);
        double lo = 0.0, hi = 0.0;
        if (!p.projection.data().empty()) {
            const auto [mn, mx] = std::minmax_element(p.projection.data().begin(), p.projection.data().end());
            lo = *mn;
            hi = *mx;
        }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double v = hi > lo ? (p.projection[y * w + x] - lo) / (hi - lo) : 0.0;
                for (std::size_t k = 0; k < c; ++k) {
                    double& dst = out[(k * H + b.y0 + y) * W + b.x0 + x];
                    dst = std::max(dst, v);
                }
            }
        bases.push_back(Json{{"frame", frame_index},
                             {"box", detail::box_json(b)},
                             {"mean", p.mean},
                             {"component", p.component},
                             {"eigenvalue", p.eigenvalue},
                             {"degenerate", p.degenerate},
                             {"min", lo},
                             {"max", hi}});
    }
    return out;
}

struct PreprocessResult {
    ModalityBundle bundle;
    std::vector<std::size_t> indices;
    Json sidecar;
};

/// Builds a bundle from a raw clip: subsampled frames, person mask applied,
/// eyes+mouth face map, PCA hand channel, pose maps read as given.
inline PreprocessResult preprocess_clip(const fs::path& raw_dir, std::uint64_t seed,
                                        std::size_t max_frames = kDefaultSubsample) {
    const RawClip raw = read_raw_manifest(raw_dir);
    PreprocessResult r;
    r.indices = subsample_frames(raw.frames, max_frames, seed);
    const std::size_t T = r.indices.size(), H = raw.height, W = raw.width;
    Tensor clip({3, T, H, W}), pose({3, T, H, W}), hand({3, T, H, W}), face({3, T, H, W});
    Json bases = Json::array();
    for (std::size_t j = 0; j < T; ++j) {
        const std::size_t src = r.indices[j];
        Tensor frame = read_png(raw_dir / "frames" / detail::frame_png(src));
        const Tensor mask = read_png(raw_dir / "person_mask" / detail::frame_png(src));
        const Tensor pose_frame = read_png(raw_dir / "pose" / detail::frame_png(src));
        if (frame.dim(1) != H || frame.dim(2) != W || mask.shape() != frame.shape() ||
            pose_frame.shape() != frame.shape())
            throw IoError("raw clip " + raw_dir.string() + ": frame " + std::to_string(src) + " has the wrong size");
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < H * W; ++i) frame[k * H * W + i] *= mask[i];
        detail::set_frame(clip, j, frame);
        detail::set_frame(pose, j, pose_frame);
        detail::set_frame(face, j, face_region_mask(frame, raw.face_boxes));
        detail::set_frame(hand, j, hand_channel(frame, raw.hand_boxes[src], j, bases));
    }
    r.bundle = {std::move(pose), std::move(hand), std::move(face), detail::frame_of(clip, 0), std::move(clip)};
    r.bundle.validate();
    r.sidecar = Json{{"source", raw_dir.filename().string()},
                     {"seed", seed},
                     {"max_frames", max_frames},
                     {"indices", r.indices},
                     {"hand_bases", bases}};
    return r;
}

inline std::vector<fs::path> run_preprocess(const RunConfig& cfg, const std::string& fp) {
    const fs::path raw_root = fs::path(cfg.data_dir) / "raw", out_root = fs::path(cfg.data_dir) / "bundles";
    const std::uint64_t base = derived_seed(cfg.seed, kSeedSubsample);
    std::vector<fs::path> out;
    std::size_t i = 0;
    for (const auto& dir : detail::list_dirs(raw_root)) {
        PreprocessResult r = preprocess_clip(dir, derived_seed(base, i++));
        const fs::path dst = out_root / dir.filename();
        save_bundle(dst, r.bundle);
        r.sidecar["fingerprint"] = fp;
        detail::write_text(dst / "preprocess.json", r.sidecar.dump(2) + "\n");
        out.push_back(dst);
    }
    return out;
}

inline std::vector<ModalityBundle> load_bundles(const fs::path& data_dir, std::vector<std::string>* names = nullptr) {
    std::vector<ModalityBundle> out;
    for (const auto& dir : detail::list_dirs(data_dir / "bundles")) {
        out.push_back(load_bundle(dir));
        if (names) names->push_back(dir.filename().string());
    }
    return out;
}

// ---------------------------------------------------------------------------
// train / sample

inline fs::path checkpoint_root(const fs::path& out_dir, int phase) {
    return out_dir / "checkpoints" / ("phase" + std::to_string(phase));
}

inline Model initial_model(const RunConfig& cfg) {
    ModelConfig mc = cfg.model;
    mc.init_seed = derived_seed(cfg.seed, kSeedInit);
    return make_model(mc);
}

inline TrainConfig effective_train_config(const RunConfig& cfg, int phase) {
    TrainConfig tc = phase == 1 ? cfg.phase1 : cfg.phase2;
    tc.seed = derived_seed(cfg.seed, phase == 1 ? kSeedPhase1 : kSeedPhase2);
    tc.threads = cfg.threads;
    return tc;
}

/// Trains one phase into `out_dir`. Phase 2 starts from the phase-1 final checkpoint.
inline TrainResult run_train(const RunConfig& cfg, int phase, const fs::path& out_dir,
                             const std::vector<ModalityBundle>& data) {
    require(phase == 1 || phase == 2, "train: phase must be 1 or 2");
    const TrainConfig tc = effective_train_config(cfg, phase);
    fs::create_directories(out_dir / "logs");
    const fs::path log_path = out_dir / "logs" / ("train_phase" + std::to_string(phase) + ".jsonl");
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw IoError("cannot write " + log_path.string());
    TrainOutputs outs{&log, checkpoint_root(out_dir, phase)};
    if (phase == 1) {
        Model m = initial_model(cfg);
        return train_phase1(m, data, tc, outs);
    }
    return train_phase2(checkpoint_root(out_dir, 1) / "final", data, tc, outs);
}

/// Latest final checkpoint under `out_dir`: phase 2 if present, else phase 1.
inline fs::path latest_checkpoint(const fs::path& out_dir) {
    for (int phase : {2, 1}) {
        const fs::path p = checkpoint_root(out_dir, phase) / "final";
        if (fs::exists(p / "manifest.json")) return p;
    }
    throw IoError("no trained checkpoint under " + (out_dir / "checkpoints").string());
}

/// Samples every bundle into samples/<name>/clip.sgt (plus PNG frames).
/// The temporal layers are used once phase 2 has run.
inline std::vector<fs::path> run_sample(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir,
                                        const std::string& fp) {
    const LoadedCheckpoint ck = load_checkpoint(checkpoint);
    std::vector<std::string> names;
    const auto data = load_bundles(cfg.data_dir, &names);
    const bool temporal = ck.info.phase >= 2;
    std::vector<SampleResult> results(data.size());
    parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
        results[i] = sample_clip(ck.model, data[i], derived_seed(cfg.sample_seed, i), temporal);
    });
    std::vector<fs::path> dirs;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const fs::path dir = out_dir / "samples" / names[i];
        fs::create_directories(dir);
        save_sgt(dir / "clip.sgt", results[i].clip);
        save_sgt(dir / "latent.sgt", results[i].latent);
        detail::write_clip_pngs(dir / "frames", results[i].clip);
        detail::write_text(dir / "sample.json", Json{{"checkpoint", checkpoint.lexically_normal().generic_string()},
                                                     {"phase", ck.info.phase},
                                                     {"temporal", temporal},
                                                     {"seed", derived_seed(cfg.sample_seed, i)},
                                                     {"fingerprint", fp}}
                                                    .dump(2) +
                                                    "\n");
        dirs.push_back(dir);
    }
    return dirs;
}

// ---------------------------------------------------------------------------
// eval

/// The clip tensor stored in a prediction or ground-truth directory.
inline Tensor load_clip_dir(const fs::path& dir) {
    for (const char* name : {"clip.sgt", "target_clip.sgt"})
        if (fs::exists(dir / name)) return load_sgt(dir / name);
    throw IoError("no clip.sgt or target_clip.sgt in " + dir.string());
}

/// Pairs every clip directory under `pred` with the same name under `gt`.
inline std::vector<ClipPair> load_pairs(const fs::path& pred, const fs::path& gt) {
    std::vector<ClipPair> pairs;
    for (const auto& dir : detail::list_dirs(pred)) {
        const std::string name = dir.filename().string();
        if (!fs::is_directory(gt / name)) throw IoError("ground truth has no clip '" + name + "' in " + gt.string());
        pairs.push_back({name, load_clip_dir(dir), load_clip_dir(gt / name)});
    }
    return pairs;
}

/// Writes <stem>.md, <stem>.csv and <stem>.json.
inline void write_report(const fs::path& stem, const EvalReport& r) {
    detail::write_text(fs::path(stem).replace_extension(".md"), report_markdown(r));
    detail::write_text(fs::path(stem).replace_extension(".csv"), report_csv(r));
    detail::write_text(fs::path(stem).replace_extension(".json"), report_json(r).dump(2) + "\n");
}

inline EvalReport run_eval(const RunConfig& cfg, const fs::path& pred, const fs::path& gt, const fs::path& stem,
                           const std::string& method, const std::string& fp) {
    const EvalReport r = make_report(method, load_pairs(pred, gt), cfg.metrics, fp);
    write_report(stem, r);
    return r;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationVariant {
    std::string label;
    CompositionConfig composition;
};

inline constexpr std::array<double, 3> kLambdaGrid{1.0, 0.1, 0.01};

/// Module rows (baseline, +motion, +motion+sapien), then the lambda grid
/// with both modules on.
inline std::vector<AblationVariant> ablation_variants(const CompositionConfig& base) {
    std::vector<AblationVariant> v;
    auto with = [&](bool motion, bool sapien, double lambda) {
        CompositionConfig c = base;
        c.enable_motion = motion;
        c.enable_sapien = sapien;
        c.lambda = lambda;
        return c;
    };
    v.push_back({"baseline", with(false, false, base.lambda)});
    v.push_back({"+motion", with(true, false, base.lambda)});
    v.push_back({"+motion+sapien", with(true, true, base.lambda)});
    for (double l : kLambdaGrid) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "lambda=%g", l);
        v.push_back({buf, with(true, true, l)});
    }
    return v;
}

struct AblationRow {
    std::string label;
    std::string fingerprint;
    ClipMetrics metrics;
};

inline constexpr const char* kAblationNote =
    "Desk-scale numbers from a small synthetic run with random frozen features; not comparable to full-scale "
    "results.";

/// Each variant gets its own phase-1 model under ablation/<fingerprint>,
/// trained here when `train` is set. Variants sharing a fingerprint share
/// a checkpoint.
inline std::vector<AblationRow> run_ablate(const RunConfig& cfg, const fs::path& out_dir, bool train,
                                           std::ostream* progress = nullptr) {
    std::vector<std::string> names;
    const auto data = load_bundles(cfg.data_dir, &names);
    std::vector<AblationRow> rows;
    for (const auto& v : ablation_variants(cfg.model.composition)) {
        RunConfig vc = cfg;
        vc.model.composition = v.composition;
        const std::string fp = fingerprint(vc);
        const fs::path root = out_dir / "ablation" / fp;
        const fs::path ck = checkpoint_root(root, 1) / "final";
        if (!fs::exists(ck / "manifest.json")) {
            if (!train)
                throw IoError("ablate: no checkpoint for row '" + v.label + "' at " + ck.string() +
                              " (rerun with --train)");
            if (progress) *progress << "training row " << v.label << " (" << fp << ")\n";
            run_train(vc, 1, root, data);
        }
        const LoadedCheckpoint loaded = load_checkpoint(ck);
        std::vector<ClipPair> pairs(data.size());
        parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
            pairs[i] = {names[i], sample_clip(loaded.model, data[i], derived_seed(cfg.sample_seed, i), false).clip,
                        data[i].target_clip};
        });
        rows.push_back({v.label, fp, make_report(v.label, pairs, cfg.metrics, fp).aggregate});
    }
    return rows;
}

/// Writes ablation.md (both tables) and ablation_modules.csv / ablation_lambda.csv.
inline void write_ablation(const fs::path& out_dir, const std::vector<AblationRow>& rows, const std::string& fp) {
    std::vector<TableRow> modules, lambdas;
    for (std::size_t i = 0; i < rows.size(); ++i) (i < 3 ? modules : lambdas).push_back({rows[i].label, rows[i].metrics});
    std::string md = table_markdown("Ablation: aggregation modules", modules, fp, kAblationNote) + "\n" +
                     table_markdown("Ablation: weighting factor lambda", lambdas, fp, kAblationNote) +
                     "\nPer-row fingerprints:\n\n";
    for (const auto& r : rows) md += "- " + r.label + ": `" + r.fingerprint + "`\n";
    detail::write_text(out_dir / "ablation.md", md);
    detail::write_text(out_dir / "ablation_modules.csv", table_csv(modules));
    detail::write_text(out_dir / "ablation_lambda.csv", table_csv(lambdas));
}

}  // namespace signdiff
