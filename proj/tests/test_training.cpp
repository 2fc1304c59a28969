#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "signdiff/training.hpp"

using namespace signdiff;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 16;
    c.feature_channels = 4;
    c.unet_base = 8;
    c.unet_wide = 8;
    c.app_dim = 4;
    c.app_hidden = 4;
    c.diffusion_steps = 100;
    c.init_seed = 3;
    return c;
}

ModalityBundle random_bundle(std::size_t frames, std::uint64_t seed) {
    Rng rng(seed);
    const Shape s{3, frames, 16, 16};
    return {rng.uniform_tensor(s, 0, 1), rng.uniform_tensor(s, 0, 1), rng.uniform_tensor(s, 0, 1),
            rng.uniform_tensor({3, 16, 16}, 0, 1), rng.uniform_tensor(s, 0, 1)};
}

std::map<std::string, Tensor> snapshot(const Model& m, ParamGroup want) {
    std::map<std::string, Tensor> out;
    visit_registry(m, [&](const std::string& name, const Tensor& t, ParamGroup g) {
        if (g == want) out.emplace(name, t);
    });
    return out;
}

TrainConfig short_run(int phase, int iterations) {
    TrainConfig c = TrainConfig::desk(phase);
    c.iterations = iterations;
    c.batch_size = 2;
    c.clip_length = 4;
    c.seed = 5;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("signdiff_test_training_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Phases, TrainableGroupsArePartitioned) {
    Model m = make_model(tiny_config());
    const auto p1 = trainable(m.params, 1), p2 = trainable(m.params, 2);
    EXPECT_FALSE(p1.empty());
    ASSERT_EQ(p2.size(), 4u);
    for (const auto& nt : p2) EXPECT_NE(nt.name.find("temporal"), std::string::npos) << nt.name;
    for (const auto& nt : p1) EXPECT_EQ(nt.name.find("temporal"), std::string::npos) << nt.name;
    EXPECT_EQ(p1.size() + p2.size(), flatten(m.params).size());
}

TEST(Phases, FreshTemporalLayersAreIdentity) {
    const Model m = make_model(tiny_config());
    const ModalityBundle b = random_bundle(5, 1);
    const auto k = condition_forward(m, b);
    Rng rng(2);
    const Tensor z = rng.normal_tensor(latent_shape_for(m, 5));
    const Tensor with = predict_noise(m, z, 40, k.condition, k.appearance.embedding, true);
    const Tensor without = predict_noise(m, z, 40, k.condition, k.appearance.embedding, false);
    EXPECT_TRUE(with == without);
    for (std::size_t f = 0; f < 5; ++f) {
        const Tensor single = predict_noise(m, slice_frames(z, f, 1), 40, slice_frames(k.condition, f, 1),
                                            k.appearance.embedding, true);
        EXPECT_TRUE(slice_frames(with, f, 1) == single) << "frame " << f;
    }
}

TEST(Phases, PhaseOneLeavesTemporalUntouched) {
    Model m = make_model(tiny_config());
    const auto temporal = snapshot(m, ParamGroup::temporal);
    const auto spatial = snapshot(m, ParamGroup::spatial);
    train_phase1(m, {random_bundle(3, 3)}, short_run(1, 3));
    EXPECT_EQ(snapshot(m, ParamGroup::temporal), temporal);
    EXPECT_NE(snapshot(m, ParamGroup::spatial), spatial);
}

TEST(Phases, PhaseTwoLeavesSpatialBitwiseUnchanged) {
    Model m = make_model(tiny_config());
    const std::vector<ModalityBundle> data{random_bundle(6, 4)};
    train_phase1(m, data, short_run(1, 2));
    const auto spatial = snapshot(m, ParamGroup::spatial);
    const auto frozen = snapshot(m, ParamGroup::frozen);
    const auto temporal = snapshot(m, ParamGroup::temporal);
    train_phase2(m, data, short_run(2, 3));
    EXPECT_EQ(snapshot(m, ParamGroup::spatial), spatial);
    EXPECT_EQ(snapshot(m, ParamGroup::frozen), frozen);
    EXPECT_NE(snapshot(m, ParamGroup::temporal), temporal);
}

TEST(Phases, PhaseTwoFromCheckpoint) {
    const fs::path dir = scratch("ck");
    Model m = make_model(tiny_config());
    const std::vector<ModalityBundle> data{random_bundle(6, 5)};
    TrainOutputs out;
    out.checkpoint_dir = dir / "phase1";
    const auto r1 = train_phase1(m, data, short_run(1, 2), out);
    ASSERT_TRUE(r1.final_checkpoint);
    Model trained;
    train_phase2(*r1.final_checkpoint, data, short_run(2, 2), {}, &trained);
    EXPECT_EQ(snapshot(trained, ParamGroup::spatial), snapshot(m, ParamGroup::spatial));
    EXPECT_THROW(train_phase2(dir / "missing", data, short_run(2, 1), {}), IoError);
    fs::remove_all(dir);
}

TEST(Phases, PhaseTwoRejectsShortClips) {
    Model m = make_model(tiny_config());
    EXPECT_THROW(train_phase2(m, {random_bundle(3, 6)}, short_run(2, 1)), InvalidArgument);
}

TEST(Training, RunsAreDeterministic) {
    const std::vector<ModalityBundle> data{random_bundle(3, 7)};
    Model a = make_model(tiny_config()), b = make_model(tiny_config());
    const auto ra = train_phase1(a, data, short_run(1, 3));
    const auto rb = train_phase1(b, data, short_run(1, 3));
    EXPECT_EQ(ra.losses, rb.losses);
    EXPECT_EQ(snapshot(a, ParamGroup::spatial), snapshot(b, ParamGroup::spatial));
}

TEST(Training, ThreadCountDoesNotChangeResults) {
    const std::vector<ModalityBundle> data{random_bundle(3, 8)};
    Model a = make_model(tiny_config()), b = make_model(tiny_config());
    TrainConfig one = short_run(1, 2), two = short_run(1, 2);
    two.threads = 2;
    EXPECT_EQ(train_phase1(a, data, one).losses, train_phase1(b, data, two).losses);
    EXPECT_EQ(snapshot(a, ParamGroup::spatial), snapshot(b, ParamGroup::spatial));
}

TEST(Training, SmoothedLossIsDebiased) {
    const std::vector<ModalityBundle> data{random_bundle(3, 9)};
    Model m = make_model(tiny_config());
    const auto r = train_phase1(m, data, short_run(1, 4));
    ASSERT_EQ(r.smoothed.size(), 4u);
    EXPECT_DOUBLE_EQ(r.initial_smoothed(), r.losses.front());
    // Second value: debiased EMA of two losses.
    const double ema = 0.99 * 0.01 * r.losses[0] + 0.01 * r.losses[1];
    EXPECT_NEAR(r.smoothed[1], ema / (1 - 0.99 * 0.99), 1e-12);
}

TEST(Training, LogHasOneRecordPerIteration) {
    std::ostringstream log;
    Model m = make_model(tiny_config());
    TrainOutputs out;
    out.log = &log;
    train_phase1(m, {random_bundle(2, 10)}, short_run(1, 3), out);
    std::istringstream in(log.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const Json j = Json::parse(line);
        EXPECT_EQ(j.at("iteration").get<int>(), ++n);
        EXPECT_TRUE(j.contains("loss") && j.contains("smoothed") && j.contains("wall_time"));
    }
    EXPECT_EQ(n, 3);
}

TEST(Training, DivergenceSavesLastGoodCheckpoint) {
    const fs::path dir = scratch("diverge");
    Model m = make_model(tiny_config());
    TrainConfig cfg = short_run(1, 20);
    cfg.learning_rate = 1e200;
    TrainOutputs out;
    out.checkpoint_dir = dir;
    try {
        train_phase1(m, {random_bundle(2, 11)}, cfg, out);
        FAIL() << "expected divergence";
    } catch (const TrainingDiverged& e) {
        ASSERT_TRUE(e.last_good_checkpoint());
        EXPECT_TRUE(fs::exists(*e.last_good_checkpoint() / "manifest.json"));
    }
    fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    const fs::path dir = scratch("roundtrip");
    ModelConfig cfg = tiny_config();
    cfg.output = OutputParameterization::velocity;
    cfg.composition.lambda = 0.1;
    Model m = make_model(cfg);
    train_phase1(m, {random_bundle(2, 12)}, short_run(1, 1));
    save_checkpoint(dir, m, {1, 1});
    const auto ck = load_checkpoint(dir);
    EXPECT_EQ(ck.info.phase, 1);
    EXPECT_EQ(ck.info.iteration, 1);
    EXPECT_EQ(model_config_json(ck.model.config), model_config_json(cfg));
    for (ParamGroup g : {ParamGroup::spatial, ParamGroup::temporal, ParamGroup::frozen})
        EXPECT_EQ(snapshot(ck.model, g), snapshot(m, g));
    fs::remove_all(dir);
}

TEST(Checkpoint, MissingTensorIsAnError) {
    const fs::path dir = scratch("missing");
    Model m = make_model(tiny_config());
    save_checkpoint(dir, m, {1, 0});
    fs::remove(tensor_file(dir, "unet.skip.weight"));
    EXPECT_THROW(load_checkpoint(dir), IoError);
    fs::remove_all(dir);
}

TEST(Config, TrainConfigValidation) {
    TrainConfig c = TrainConfig::desk(1);
    c.ema = 1.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = TrainConfig::desk(1);
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    const TrainConfig p = TrainConfig::full(2);
    EXPECT_EQ(p.iterations, 10000);
    EXPECT_EQ(p.batch_size, 2u);
    EXPECT_EQ(p.clip_length, 24u);
    EXPECT_DOUBLE_EQ(p.learning_rate, 1e-5);
}
