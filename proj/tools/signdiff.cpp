// signdiff: synth, preprocess, train, sample, eval, gradcheck, ablate.
//
// Settings come from --config (JSON), then SIGNDIFF_SEED / SIGNDIFF_THREADS /
// SIGNDIFF_OUT, then command-line flags; later sources win.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "signdiff/gradcheck_suite.hpp"
#include "signdiff/pipeline.hpp"

namespace {

using namespace signdiff;

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> data;
    std::optional<std::size_t> threads;
};

RunConfig resolve(const GlobalFlags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    apply_env_overrides(cfg);
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out_dir = *f.out;
    if (f.data) cfg.data_dir = *f.data;
    if (f.threads) cfg.threads = *f.threads;
    cfg.validate();
    return cfg;
}

void write_run_record(const RunConfig& cfg, const std::string& command, const std::string& fp) {
    const Json record{{"command", command}, {"fingerprint", fp}, {"config", run_config_json(cfg)}};
    detail::write_text(fs::path(cfg.out_dir) / ("run_" + command + ".json"), record.dump(2) + "\n");
}

int cmd_gradcheck(std::uint64_t seed) {
    const auto result = run_grad_suite(default_grad_components(seed));
    for (const auto& c : result.components)
        std::printf("%-16s max_rel_err=%.3e  checked=%zu  %s\n", c.name.c_str(), c.check.max_relative_error,
                    c.check.coordinates_checked, c.pass ? "PASS" : "FAIL");
    std::printf("gradcheck: %s (tolerance %.0e)\n", result.all_pass() ? "all components pass" : "FAILED", kGradTolerance);
    return result.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sign-language video diffusion: desk-scale pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalFlags flags;
    app.add_option("--config", flags.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", flags.seed, "Run seed");
    app.add_option("--out", flags.out, "Output directory");
    app.add_option("--data", flags.data, "Data directory");
    app.add_option("--threads", flags.threads, "Worker threads (default 1)")->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "Render synthetic raw clips into <data>/raw");
    auto* prep = app.add_subcommand("preprocess", "Raw clips to modality bundles in <data>/bundles");

    auto* train = app.add_subcommand("train", "Train phase 1 (spatial) or phase 2 (temporal)");
    int phase = 1;
    train->add_option("--phase", phase, "1 or 2")->check(CLI::IsMember({1, 2}));

    auto* sample = app.add_subcommand("sample", "Sample every bundle into <out>/samples");
    std::string checkpoint;
    sample->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: latest final)");

    auto* eval = app.add_subcommand("eval", "PSNR / SSIM / perceptual report");
    std::string pred, gt, report, method = "signdiff";
    eval->add_option("--pred", pred, "Directory of predicted clip_* dirs")->required();
    eval->add_option("--gt", gt, "Directory of ground-truth clip_* dirs")->required();
    eval->add_option("--out", report, "Report path stem; writes .md, .csv and .json")->required();
    eval->add_option("--method", method, "Method label");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");

    auto* ablate = app.add_subcommand("ablate", "Module and lambda ablation tables");
    bool train_missing = false;
    ablate->add_flag("--train", train_missing, "Train missing checkpoints at desk scale");

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = resolve(flags);
        const std::string fp = fingerprint(cfg);
        const fs::path out(cfg.out_dir);
        if (*synth) {
            const auto dirs = run_synth(cfg);
            detail::write_text(fs::path(cfg.data_dir) / "raw" / "synth.json",
                               Json{{"fingerprint", fp}, {"clips", dirs.size()}}.dump(2) + "\n");
            std::printf("wrote %zu raw clips to %s\n", dirs.size(), (fs::path(cfg.data_dir) / "raw").c_str());
        } else if (*prep) {
            const auto dirs = run_preprocess(cfg, fp);
            std::printf("wrote %zu bundles to %s\n", dirs.size(), (fs::path(cfg.data_dir) / "bundles").c_str());
        } else if (*train) {
            const auto data = load_bundles(cfg.data_dir);
            const TrainResult r = run_train(cfg, phase, out, data);
            write_run_record(cfg, "train_phase" + std::to_string(phase), fp);
            std::printf("phase %d: %zu iterations, smoothed loss %.6f -> %.6f, checkpoint %s\n", phase,
                        r.losses.size(), r.initial_smoothed(), r.final_smoothed(),
                        r.final_checkpoint ? r.final_checkpoint->c_str() : "-");
        } else if (*sample) {
            const fs::path ck = checkpoint.empty() ? latest_checkpoint(out) : fs::path(checkpoint);
            const auto dirs = run_sample(cfg, ck, out, fp);
            std::printf("sampled %zu clips from %s\n", dirs.size(), ck.c_str());
        } else if (*eval) {
            const EvalReport r = run_eval(cfg, pred, gt, report, method, fp);
            std::printf("%s: PSNR %.4f dB  SSIM %.4f  perceptual %.6f over %zu clips\n", method.c_str(),
                        r.aggregate.psnr, r.aggregate.ssim, r.aggregate.perceptual, r.clips.size());
        } else if (*grad) {
            return cmd_gradcheck(cfg.seed);
        } else if (*ablate) {
            const auto rows = run_ablate(cfg, out, train_missing, &std::cerr);
            write_ablation(out, rows, fp);
            for (const auto& r : rows)
                std::printf("%-16s PSNR %.4f  SSIM %.4f  perceptual %.6f\n", r.label.c_str(), r.metrics.psnr,
                            r.metrics.ssim, r.metrics.perceptual);
        }
    } catch (const TrainingDiverged& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        if (e.last_good_checkpoint()) std::fprintf(stderr, "last good checkpoint: %s\n", e.last_good_checkpoint()->c_str());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
