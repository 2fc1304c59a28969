#pragma once

// Checkpoint directory: manifest.json plus one SGT1 file per tensor.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "signdiff/model.hpp"

namespace signdiff {

using Json = nlohmann::ordered_json;

inline Json model_config_json(const ModelConfig& c) {
    return Json{{"image_channels", c.image_channels},
                {"image_size", c.image_size},
                {"feature_channels", c.feature_channels},
                {"patch", c.patch},
                {"unet_base", c.unet_base},
                {"unet_wide", c.unet_wide},
                {"app_dim", c.app_dim},
                {"app_hidden", c.app_hidden},
                {"lambda", c.composition.lambda},
                {"enable_motion", c.composition.enable_motion},
                {"enable_sapien", c.composition.enable_sapien},
                {"stub_seed", c.stub_seed},
                {"init_seed", c.init_seed},
                {"diffusion_steps", c.diffusion_steps},
                {"beta_start", c.beta_start},
                {"beta_end", c.beta_end},
                {"latent_scale", c.latent_scale},
                {"output", parameterization_name(c.output)}};
}

/// Reads fields present in `j` over `base`; unknown keys are rejected.
inline ModelConfig model_config_from_json(const Json& j, ModelConfig c = {}) {
    require(j.is_object(), "model config: expected a JSON object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "image_channels") c.image_channels = v.get<std::size_t>();
            else if (key == "image_size") c.image_size = v.get<std::size_t>();
            else if (key == "feature_channels") c.feature_channels = v.get<std::size_t>();
            else if (key == "patch") c.patch = v.get<std::size_t>();
            else if (key == "unet_base") c.unet_base = v.get<std::size_t>();
            else if (key == "unet_wide") c.unet_wide = v.get<std::size_t>();
            else if (key == "app_dim") c.app_dim = v.get<std::size_t>();
            else if (key == "app_hidden") c.app_hidden = v.get<std::size_t>();
            else if (key == "lambda") c.composition.lambda = v.get<double>();
            else if (key == "enable_motion") c.composition.enable_motion = v.get<bool>();
            else if (key == "enable_sapien") c.composition.enable_sapien = v.get<bool>();
            else if (key == "stub_seed") c.stub_seed = v.get<std::uint64_t>();
            else if (key == "init_seed") c.init_seed = v.get<std::uint64_t>();
            else if (key == "diffusion_steps") c.diffusion_steps = v.get<int>();
            else if (key == "beta_start") c.beta_start = v.get<double>();
            else if (key == "beta_end") c.beta_end = v.get<double>();
            else if (key == "latent_scale") c.latent_scale = v.get<double>();
            else if (key == "output") c.output = parse_parameterization(v.get<std::string>());
            else throw InvalidArgument("model config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("model config: bad value for '" + key + "': " + e.what());
        }
    }
    c.validate();
    return c;
}

struct CheckpointInfo {
    int phase = 0;
    int iteration = 0;
};

inline std::filesystem::path tensor_file(const std::filesystem::path& dir, const std::string& name) {
    return dir / (name + ".sgt");
}

inline void save_checkpoint(const std::filesystem::path& dir, const Model& m, const CheckpointInfo& info) {
    std::filesystem::create_directories(dir);
    Json tensors = Json::array();
    visit_registry(m, [&](const std::string& name, const Tensor& t, ParamGroup g) {
        save_sgt(tensor_file(dir, name), t);
        tensors.push_back(Json{{"name", name}, {"group", group_name(g)}, {"shape", t.shape()}});
    });
    const Json manifest{{"format", "signdiff-checkpoint-1"},
                        {"phase", info.phase},
                        {"iteration", info.iteration},
                        {"model", model_config_json(m.config)},
                        {"tensors", tensors}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

struct LoadedCheckpoint {
    Model model;
    CheckpointInfo info;
};

/// Rebuilds the model from the manifest, then overwrites every trainable
/// tensor. Stub tensors must match the ones regenerated from the stored seed.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    const Json manifest = read_json_file(dir / "manifest.json");
    if (manifest.value("format", "") != "signdiff-checkpoint-1")
        throw IoError("unrecognized checkpoint format in " + dir.string());
    LoadedCheckpoint r;
    r.info.phase = manifest.at("phase").get<int>();
    r.info.iteration = manifest.at("iteration").get<int>();
    r.model = make_model(model_config_from_json(manifest.at("model")));

    std::map<std::string, bool> listed;
    for (const auto& t : manifest.at("tensors")) listed[t.at("name").get<std::string>()] = true;
    visit_model(r.model.params, [&](const std::string& name, Tensor& t, ParamGroup) {
        if (!listed.count(name)) throw IoError("checkpoint missing tensor '" + name + "'");
        Tensor loaded = load_sgt(tensor_file(dir, name));
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(loaded.shape()) + ", expected " +
                          shape_str(t.shape()));
        t = std::move(loaded);
    });
    r.model.stub.visit("stub.", [&](const std::string& name, const Tensor& t) {
        if (!(load_sgt(tensor_file(dir, name)) == t))
            throw IoError("checkpoint stub tensor '" + name + "' does not match its seed");
    });
    return r;
}

}  // namespace signdiff
