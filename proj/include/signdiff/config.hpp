#pragma once

// Run configuration: JSON file, environment overrides and the fingerprint
// stamped into every output.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>

#include "signdiff/checkpoint.hpp"
#include "signdiff/metrics.hpp"
#include "signdiff/training.hpp"

namespace signdiff {

struct DataConfig {
    std::size_t clips = 1;
    std::size_t frames = 24;
    double face_amplitude = 1.5;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string data_dir = "data";
    std::string out_dir = "out";
    ModelConfig model;
    DataConfig data;
    TrainConfig phase1 = TrainConfig::desk(1);
    TrainConfig phase2 = TrainConfig::desk(2);
    MetricSettings metrics;
    std::uint64_t sample_seed = 1234;

    void validate() const {
        model.validate();
        phase1.validate();
        phase2.validate();
        require(phase1.phase == 1 && phase2.phase == 2, "run config: phase sections out of order");
        require(data.clips > 0 && data.frames > 0, "run config: empty data section");
        require(data.face_amplitude >= 0.0, "run config: negative face amplitude");
        require(threads >= 1, "run config: threads must be >= 1");
        require(metrics.psnr_peak > 0.0 && metrics.ssim.window > 0, "run config: invalid metric settings");
        require(metrics.ssim.window <= model.image_size, "run config: SSIM window exceeds image size");
    }
};

/// Seed for a named component, derived from the run seed.
inline std::uint64_t derived_seed(std::uint64_t run_seed, std::uint64_t tag) {
    return splitmix64(run_seed * 0x9e3779b97f4a7c15ULL + tag);
}

namespace detail {

template <class Fn>
void for_keys(const Json& j, const std::string& section, Fn&& fn) {
    if (!j.is_object()) throw InvalidArgument("config: section '" + section + "' must be an object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (!fn(key, v)) throw InvalidArgument("config: unknown key '" + section + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("config: bad value for '" + section + key + "': " + e.what());
        }
    }
}

inline TrainConfig train_from_json(const Json& j, int phase, const std::string& section) {
    TrainConfig c = TrainConfig::desk(phase);
    if (j.contains("preset")) {
        const auto preset = j.at("preset").get<std::string>();
        if (preset == "full") c = TrainConfig::full(phase);
        else if (preset != "desk") throw InvalidArgument("config: preset must be 'desk' or 'full'");
    }
    for_keys(j, section, [&](const std::string& k, const Json& v) {
        if (k == "preset") return true;
        if (k == "iterations") c.iterations = v.get<int>();
        else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (k == "learning_rate") c.learning_rate = v.get<double>();
        else if (k == "weight_decay") c.weight_decay = v.get<double>();
        else if (k == "clip_length") c.clip_length = v.get<std::size_t>();
        else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
        else if (k == "ema") c.ema = v.get<double>();
        else return false;
        return true;
    });
    return c;
}

inline Json train_json(const TrainConfig& c) {
    return Json{{"preset", c.desk_scale ? "desk" : "full"},
                {"iterations", c.iterations},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"clip_length", c.clip_length},
                {"checkpoint_every", c.checkpoint_every},
                {"ema", c.ema}};
}

}  // namespace detail

inline RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    detail::for_keys(j, "", [&](const std::string& k, const Json& v) {
        if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "threads") c.threads = v.get<std::size_t>();
        else if (k == "paths")
            detail::for_keys(v, "paths.", [&](const std::string& pk, const Json& pv) {
                if (pk == "data") c.data_dir = pv.get<std::string>();
                else if (pk == "out") c.out_dir = pv.get<std::string>();
                else return false;
                return true;
            });
        else if (k == "model") c.model = model_config_from_json(v);
        else if (k == "data")
            detail::for_keys(v, "data.", [&](const std::string& dk, const Json& dv) {
                if (dk == "clips") c.data.clips = dv.get<std::size_t>();
                else if (dk == "frames") c.data.frames = dv.get<std::size_t>();
                else if (dk == "face_amplitude") c.data.face_amplitude = dv.get<double>();
                else return false;
                return true;
            });
        else if (k == "phase1") c.phase1 = detail::train_from_json(v, 1, "phase1.");
        else if (k == "phase2") c.phase2 = detail::train_from_json(v, 2, "phase2.");
        else if (k == "metrics")
            detail::for_keys(v, "metrics.", [&](const std::string& mk, const Json& mv) {
                if (mk == "psnr_peak") c.metrics.psnr_peak = mv.get<double>();
                else if (mk == "ssim_window") c.metrics.ssim.window = mv.get<std::size_t>();
                else if (mk == "ssim_k1") c.metrics.ssim.k1 = mv.get<double>();
                else if (mk == "ssim_k2") c.metrics.ssim.k2 = mv.get<double>();
                else if (mk == "perceptual_seed") c.metrics.perceptual_seed = mv.get<std::uint64_t>();
                else return false;
                return true;
            });
        else if (k == "sample")
            detail::for_keys(v, "sample.", [&](const std::string& sk, const Json& sv) {
                if (sk == "seed") c.sample_seed = sv.get<std::uint64_t>();
                else return false;
                return true;
            });
        else return false;
        return true;
    });
    c.validate();
    return c;
}

/// Everything that can change results. Paths and thread count are left out:
/// outputs do not depend on them.
inline Json run_config_json(const RunConfig& c) {
    return Json{{"seed", c.seed},
                {"model", model_config_json(c.model)},
                {"data",
                 {{"clips", c.data.clips},
                  {"frames", c.data.frames},
                  {"face_amplitude", c.data.face_amplitude}}},
                {"phase1", detail::train_json(c.phase1)},
                {"phase2", detail::train_json(c.phase2)},
                {"metrics",
                 {{"psnr_peak", c.metrics.psnr_peak},
                  {"ssim_window", c.metrics.ssim.window},
                  {"ssim_k1", c.metrics.ssim.k1},
                  {"ssim_k2", c.metrics.ssim.k2},
                  {"perceptual_seed", c.metrics.perceptual_seed}}},
                {"sample", {{"seed", c.sample_seed}}}};
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fingerprint(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(run_config_json(c).dump())));
    return buf;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json_file(path)); }

/// Overrides read from SIGNDIFF_SEED, SIGNDIFF_THREADS and SIGNDIFF_OUT.
/// Precedence is flag > environment > file, so apply these before flags.
using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
    if (const char* v = std::getenv(name)) return std::string(v);
    return std::nullopt;
}

inline void apply_env_overrides(RunConfig& c, const EnvLookup& env = process_env) {
    auto number = [](const std::string& s, const char* name) {
        std::uint64_t v = 0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc{} || end != s.data() + s.size())
            throw InvalidArgument(std::string("environment variable ") + name + " is not a non-negative integer");
        return v;
    };
    if (auto v = env("SIGNDIFF_SEED")) c.seed = number(*v, "SIGNDIFF_SEED");
    if (auto v = env("SIGNDIFF_THREADS")) c.threads = number(*v, "SIGNDIFF_THREADS");
    if (auto v = env("SIGNDIFF_OUT")) c.out_dir = *v;
    c.validate();
}

}  // namespace signdiff
