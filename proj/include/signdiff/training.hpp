#pragma once

// Two-phase training. Phase 1 fits encoders, aggregation, appearance encoder
// and the spatial U-Net on single frames; phase 2 fits only the temporal
// layers on whole clips with everything else frozen.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "signdiff/checkpoint.hpp"
#include "signdiff/diffusion.hpp"
#include "signdiff/optim.hpp"
#include "signdiff/parallel.hpp"

namespace signdiff {

struct TrainConfig {
    int phase = 1;
    int iterations = 1000;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    std::size_t clip_length = 8;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 keeps only the final checkpoint
    bool desk_scale = true;
    std::size_t threads = 1;
    double ema = 0.99;

    /// Full-scale settings: 30k iterations at batch 64, then 10k on 24-frame
    /// clips at batch 2, AdamW with lr 1e-5 and weight decay 1e-2.
    static TrainConfig full(int phase) {
        TrainConfig c;
        c.phase = phase;
        c.desk_scale = false;
        c.learning_rate = 1e-5;
        c.weight_decay = 1e-2;
        c.iterations = phase == 1 ? 30000 : 10000;
        c.batch_size = phase == 1 ? 64 : 2;
        c.clip_length = phase == 1 ? 8 : 24;
        return c;
    }

    static TrainConfig desk(int phase) {
        TrainConfig c;
        c.phase = phase;
        c.iterations = phase == 1 ? 1000 : 100;
        c.batch_size = phase == 1 ? 8 : 2;
        c.clip_length = phase == 1 ? 8 : 24;
        c.learning_rate = phase == 1 ? 1e-3 : 1e-3;
        return c;
    }

    void validate() const {
        require(phase == 1 || phase == 2, "train config: phase must be 1 or 2");
        require(iterations >= 0 && batch_size > 0 && clip_length > 0, "train config: non-positive sizes");
        require(learning_rate >= 0.0 && weight_decay >= 0.0, "train config: negative learning rate or decay");
        require(ema >= 0.0 && ema < 1.0, "train config: ema factor must lie in [0, 1)");
        require(checkpoint_every >= 0 && threads >= 1, "train config: invalid cadence or thread count");
    }
};

struct TrainOutputs {
    std::ostream* log = nullptr;                // line-delimited JSON records
    std::optional<std::filesystem::path> checkpoint_dir;
};

struct TrainResult {
    std::vector<double> losses;
    std::vector<double> smoothed;  // debiased exponential moving average
    std::optional<std::filesystem::path> final_checkpoint;

    double initial_smoothed() const { return smoothed.empty() ? 0.0 : smoothed.front(); }
    double final_smoothed() const { return smoothed.empty() ? 0.0 : smoothed.back(); }
};

class TrainingDiverged : public NonFiniteError {
public:
    TrainingDiverged(const std::string& what, std::optional<std::filesystem::path> last_good)
        : NonFiniteError(what), last_good_(std::move(last_good)) {}
    const std::optional<std::filesystem::path>& last_good_checkpoint() const noexcept { return last_good_; }

private:
    std::optional<std::filesystem::path> last_good_;
};

/// Names of parameters each phase optimizes.
inline std::vector<NamedTensor> trainable(ModelParams& p, int phase) {
    std::vector<NamedTensor> out;
    const ParamGroup want = phase == 1 ? ParamGroup::spatial : ParamGroup::temporal;
    for (auto& nt : flatten(p))
        if (nt.group == want) out.push_back(nt);
    return out;
}

namespace detail {

class LossTracker {
public:
    explicit LossTracker(double factor) : factor_(factor) {}

    double push(double loss) {
        ++count_;
        ema_ = factor_ * ema_ + (1.0 - factor_) * loss;
        return ema_ / (1.0 - std::pow(factor_, static_cast<double>(count_)));
    }

private:
    double factor_;
    double ema_ = 0.0;
    std::int64_t count_ = 0;
};

inline std::filesystem::path step_dir(const std::filesystem::path& root, int iteration) {
    std::string n = std::to_string(iteration);
    return root / ("step_" + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n);
}

struct ItemResult {
    double loss = 0.0;
    UNetGrads grads;
};

/// Squared-error loss of one item and the U-Net gradients of `scale * loss`.
inline ItemResult run_item(const Model& m, const Tensor& z0, const Tensor& cond, const Tensor& app, int t,
                           const Tensor& eps, bool temporal, double scale) {
    const Tensor z_t = q_sample(z0, t, eps, m.schedule);
    const UNetCache k = unet_forward(m.params.unet, z_t, t, cond, app, temporal);
    const OutputScaling os = output_scaling(m, t);
    ItemResult r;
    Tensor diff = scale_output(os, k.out, z_t) - eps;
    r.loss = dot(diff, diff) / static_cast<double>(diff.size());
    diff *= 2.0 * scale * os.out / static_cast<double>(diff.size());
    r.grads.params = zeros_like(m.params.unet);
    unet_backward(m.params.unet, k, diff, r.grads);
    return r;
}

template <class StepFn>
TrainResult run_loop(Model& model, const TrainConfig& cfg, const TrainOutputs& out, StepFn&& step) {
    cfg.validate();
    TrainResult result;
    auto params = trainable(model.params, cfg.phase);
    std::vector<Tensor*> ptrs;
    for (auto& nt : params) ptrs.push_back(nt.tensor);
    OptimizerState opt;
    opt.config.learning_rate = cfg.learning_rate;
    opt.config.weight_decay = cfg.weight_decay;
    LossTracker tracker(cfg.ema);
    const auto start = std::chrono::steady_clock::now();
    const Rng base(cfg.seed);

    auto save = [&](const std::filesystem::path& dir, int iteration) {
        save_checkpoint(dir, model, {cfg.phase, iteration});
        return dir;
    };

    for (int it = 0; it < cfg.iterations; ++it) {
        double loss = 0.0;
        ModelParams grads;
        try {
            Rng rng = base.split(static_cast<std::uint64_t>(it));
            grads = step(rng, loss);
            if (!std::isfinite(loss)) throw NonFiniteError("non-finite loss");
            std::vector<const Tensor*> gptrs;
            for (auto& nt : trainable(grads, cfg.phase)) gptrs.push_back(nt.tensor);
            adamw_step(ptrs, gptrs, opt);
        } catch (const NonFiniteError& e) {
            std::optional<std::filesystem::path> last;
            if (out.checkpoint_dir) last = save(*out.checkpoint_dir / "last_good", it);
            throw TrainingDiverged("training diverged at iteration " + std::to_string(it + 1) + " (phase " +
                                       std::to_string(cfg.phase) + "): " + e.what(),
                                   last);
        }
        const double smooth = tracker.push(loss);
        result.losses.push_back(loss);
        result.smoothed.push_back(smooth);
        if (out.log) {
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            *out.log << Json{{"iteration", it + 1},
                             {"phase", cfg.phase},
                             {"loss", loss},
                             {"smoothed", smooth},
                             {"wall_time", wall}}
                            .dump()
                     << '\n';
        }
        if (out.checkpoint_dir && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 &&
            it + 1 < cfg.iterations)
            save(step_dir(*out.checkpoint_dir, it + 1), it + 1);
    }
    if (out.log) out.log->flush();
    if (out.checkpoint_dir) result.final_checkpoint = save(*out.checkpoint_dir / "final", cfg.iterations);
    return result;
}

inline void check_dataset(const Model& model, const std::vector<ModalityBundle>& data) {
    require(!data.empty(), "training: empty dataset");
    for (const auto& b : data) {
        b.validate();
        check_bundle_for_model(model.config, b);
    }
}

}  // namespace detail

/// One phase-1 training item: frame `frame` of clip `clip`, noised at step t.
struct FrameItem {
    std::size_t clip = 0;
    std::size_t frame = 0;
    int t = 1;
    Tensor eps;  // (c_lat, 1, h, w)
};

struct LossAndGrads {
    double loss = 0.0;
    ModelParams grads;
};

inline std::vector<FrameItem> draw_frame_items(const Model& model, const std::vector<Tensor>& latents,
                                               std::size_t count, const Rng& rng) {
    std::vector<FrameItem> items;
    for (std::size_t j = 0; j < count; ++j) {
        Rng r = rng.split(j);
        FrameItem item;
        item.clip = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(latents.size()) - 1));
        const Shape& ls = latents[item.clip].shape();
        item.frame = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(ls[1]) - 1));
        item.t = static_cast<int>(r.uniform_int(1, model.schedule.steps()));
        item.eps = r.normal_tensor({ls[0], 1, ls[2], ls[3]});
        items.push_back(std::move(item));
    }
    return items;
}

/// Mean noise-prediction error over frame items. Forward only.
inline double phase1_loss(const Model& model, const std::vector<ModalityBundle>& data,
                          const std::vector<Tensor>& latents, const std::vector<FrameItem>& items) {
    require(!items.empty(), "phase1_loss: no items");
    double loss = 0.0;
    for (const auto& item : items) {
        const ConditionCache k = condition_forward(model, data.at(item.clip));
        const Tensor z0 = slice_frames(latents.at(item.clip), item.frame, 1);
        const Tensor z_t = q_sample(z0, item.t, item.eps, model.schedule);
        const Tensor eps_hat = predict_noise(model, z_t, item.t, slice_frames(k.condition, item.frame, 1),
                                             k.appearance.embedding, false);
        loss += mean_squared_error(eps_hat, item.eps);
    }
    return loss / static_cast<double>(items.size());
}

/// phase1_loss and its gradient with respect to every spatial parameter.
/// Conditions are computed once per clip in use; gradients of the per-frame
/// condition slices are gathered before running back through the encoders
/// and aggregation module.
inline LossAndGrads phase1_objective(const Model& model, const std::vector<ModalityBundle>& data,
                                     const std::vector<Tensor>& latents, const std::vector<FrameItem>& items,
                                     std::size_t threads = 1) {
    require(!items.empty(), "phase1_objective: no items");
    std::map<std::size_t, ConditionCache> conds;
    for (const auto& item : items)
        if (!conds.count(item.clip)) conds.emplace(item.clip, condition_forward(model, data.at(item.clip)));

    const double scale = 1.0 / static_cast<double>(items.size());
    std::vector<detail::ItemResult> results(items.size());
    parallel_for(items.size(), threads, [&](std::size_t j) {
        const FrameItem& item = items[j];
        const ConditionCache& k = conds.at(item.clip);
        results[j] = detail::run_item(model, slice_frames(latents.at(item.clip), item.frame, 1),
                                      slice_frames(k.condition, item.frame, 1), k.appearance.embedding, item.t,
                                      item.eps, false, scale);
    });

    LossAndGrads r{0.0, zeros_like(model.params)};
    std::vector<Tensor*> dst;
    visit_unet(r.grads.unet, "", [&](const std::string&, Tensor& t, ParamGroup) { dst.push_back(&t); });
    std::map<std::size_t, std::pair<Tensor, Tensor>> cond_grads;
    for (std::size_t j = 0; j < items.size(); ++j) {
        r.loss += results[j].loss * scale;
        std::size_t i = 0;
        visit_unet(results[j].grads.params, "", [&](const std::string&, const Tensor& t, ParamGroup) { *dst[i++] += t; });
        const ConditionCache& k = conds.at(items[j].clip);
        auto& cg = cond_grads[items[j].clip];
        if (cg.first.empty()) {
            cg.first = Tensor::zeros_like(k.condition);
            cg.second = Tensor::zeros_like(k.appearance.embedding);
        }
        accumulate_frames(cg.first, items[j].frame, results[j].grads.cond);
        cg.second += results[j].grads.app;
    }
    for (const auto& [clip, g] : cond_grads) condition_backward(model, conds.at(clip), g.first, g.second, r.grads);
    return r;
}

/// Phase 1: per-frame noise prediction over `batch_size` random
/// (clip, frame, t, eps) items per iteration.
inline TrainResult train_phase1(Model& model, const std::vector<ModalityBundle>& data, const TrainConfig& cfg,
                                const TrainOutputs& out = {}) {
    require(cfg.phase == 1, "train_phase1: config phase must be 1");
    detail::check_dataset(model, data);
    std::vector<Tensor> latents;
    for (const auto& b : data) latents.push_back(encode_latent(model, b.target_clip));
    auto step = [&](Rng& rng, double& loss) {
        auto r = phase1_objective(model, data, latents, draw_frame_items(model, latents, cfg.batch_size, rng),
                                  cfg.threads);
        loss = r.loss;
        return std::move(r.grads);
    };
    return detail::run_loop(model, cfg, out, step);
}

/// Phase 2: temporal layers only, on `clip_length`-frame windows. Conditions
/// are fixed because every spatial weight is frozen.
inline TrainResult train_phase2(Model& model, const std::vector<ModalityBundle>& data, const TrainConfig& cfg,
                                const TrainOutputs& out = {}) {
    require(cfg.phase == 2, "train_phase2: config phase must be 2");
    detail::check_dataset(model, data);
    std::vector<Tensor> latents;
    std::vector<ConditionCache> conds;
    for (const auto& b : data) {
        if (b.frames() < cfg.clip_length)
            throw InvalidArgument("train_phase2: clip has " + std::to_string(b.frames()) +
                                  " frames, fewer than the clip length " + std::to_string(cfg.clip_length));
        latents.push_back(encode_latent(model, b.target_clip));
        conds.push_back(condition_forward(model, b));
    }

    auto step = [&](Rng& rng, double& loss) {
        struct Item {
            std::size_t clip, start;
            int t;
            Tensor eps;
        };
        std::vector<Item> items;
        for (std::size_t j = 0; j < cfg.batch_size; ++j) {
            Rng r = rng.split(j);
            Item item;
            item.clip = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
            item.start = static_cast<std::size_t>(
                r.uniform_int(0, static_cast<std::int64_t>(data[item.clip].frames() - cfg.clip_length)));
            item.t = static_cast<int>(r.uniform_int(1, model.schedule.steps()));
            const Shape& ls = latents[item.clip].shape();
            item.eps = r.normal_tensor({ls[0], cfg.clip_length, ls[2], ls[3]});
            items.push_back(std::move(item));
        }
        const double scale = 1.0 / static_cast<double>(items.size());
        std::vector<detail::ItemResult> results(items.size());
        parallel_for(items.size(), cfg.threads, [&](std::size_t j) {
            const Item& item = items[j];
            results[j] = detail::run_item(model, slice_frames(latents[item.clip], item.start, cfg.clip_length),
                                          slice_frames(conds[item.clip].condition, item.start, cfg.clip_length),
                                          conds[item.clip].appearance.embedding, item.t, item.eps, true, scale);
        });
        ModelParams grads = zeros_like(model.params);
        loss = 0.0;
        for (std::size_t j = 0; j < items.size(); ++j) {
            loss += results[j].loss * scale;
            grads.unet.temporal1.kernel += results[j].grads.params.temporal1.kernel;
            grads.unet.temporal1.bias += results[j].grads.params.temporal1.bias;
            grads.unet.temporal2.kernel += results[j].grads.params.temporal2.kernel;
            grads.unet.temporal2.bias += results[j].grads.params.temporal2.bias;
        }
        return grads;
    };
    return detail::run_loop(model, cfg, out, step);
}

/// Phase 2 from a checkpoint directory, which must hold a phase-1 (or later) model.
inline TrainResult train_phase2(const std::filesystem::path& phase1_checkpoint, const std::vector<ModalityBundle>& data,
                                const TrainConfig& cfg, const TrainOutputs& out, Model* trained = nullptr) {
    if (!std::filesystem::exists(phase1_checkpoint / "manifest.json"))
        throw IoError("train_phase2: missing phase-1 checkpoint at " + phase1_checkpoint.string());
    LoadedCheckpoint ck = load_checkpoint(phase1_checkpoint);
    require(ck.info.phase >= 1, "train_phase2: checkpoint has no phase-1 training");
    TrainResult r = train_phase2(ck.model, data, cfg, out);
    if (trained) *trained = std::move(ck.model);
    return r;
}

}  // namespace signdiff
