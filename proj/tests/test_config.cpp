#include <gtest/gtest.h>

#include <map>

#include "signdiff/config.hpp"

using namespace signdiff;

namespace {

EnvLookup fake_env(std::map<std::string, std::string> vars) {
    return [vars](const char* name) -> std::optional<std::string> {
        auto it = vars.find(name);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

}  // namespace

TEST(RunConfig, DefaultsValidate) {
    const RunConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.threads, 1u);
    EXPECT_EQ(c.model.output, OutputParameterization::epsilon);
    EXPECT_DOUBLE_EQ(c.model.composition.lambda, 0.01);
}

TEST(RunConfig, JsonRoundTrip) {
    RunConfig c;
    c.seed = 42;
    c.model.composition.lambda = 0.1;
    c.model.output = OutputParameterization::sample;
    c.phase1.iterations = 17;
    c.data.frames = 12;
    c.metrics.ssim.window = 4;
    c.sample_seed = 9;
    const Json j = run_config_json(c);
    EXPECT_EQ(run_config_json(run_config_from_json(j)), j);
}

TEST(RunConfig, PartialFileKeepsDefaults) {
    const RunConfig c = run_config_from_json(Json::parse(R"({"seed": 3, "phase1": {"iterations": 5}})"));
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.phase1.iterations, 5);
    EXPECT_EQ(c.phase1.batch_size, TrainConfig::desk(1).batch_size);
    EXPECT_EQ(c.data_dir, "data");
}

TEST(RunConfig, FullPreset) {
    const RunConfig c = run_config_from_json(Json::parse(R"({"phase1": {"preset": "full"}})"));
    EXPECT_EQ(c.phase1.iterations, 30000);
    EXPECT_EQ(c.phase1.batch_size, 64u);
    EXPECT_FALSE(c.phase1.desk_scale);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"phase1": {"preset": "huge"}})")), InvalidArgument);
}

TEST(RunConfig, UnknownKeysAreNamed) {
    try {
        run_config_from_json(Json::parse(R"({"phase2": {"iters": 3}})"));
        FAIL();
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("phase2.iters"), std::string::npos) << e.what();
    }
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"model": {"depth": 3}})")), InvalidArgument);
}

TEST(RunConfig, BadValuesRejected) {
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"seed": "x"})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"threads": 0})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"model": {"latent_scale": 0}})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"model": {"output": "x0"}})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"metrics": {"ssim_window": 64}})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(Json::parse("[1, 2]")), InvalidArgument);
}

TEST(Env, OverridesFileValues) {
    RunConfig c = run_config_from_json(Json::parse(R"({"seed": 3, "threads": 2})"));
    apply_env_overrides(c, fake_env({{"SIGNDIFF_SEED", "11"}, {"SIGNDIFF_OUT", "/tmp/x"}}));
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.threads, 2u);
    EXPECT_EQ(c.out_dir, "/tmp/x");
}

TEST(Env, RejectsMalformedNumbers) {
    RunConfig c;
    EXPECT_THROW(apply_env_overrides(c, fake_env({{"SIGNDIFF_SEED", "12a"}})), InvalidArgument);
    EXPECT_THROW(apply_env_overrides(c, fake_env({{"SIGNDIFF_THREADS", "-1"}})), InvalidArgument);
    EXPECT_THROW(apply_env_overrides(c, fake_env({{"SIGNDIFF_THREADS", "0"}})), InvalidArgument);
}

TEST(Fingerprint, IgnoresPathsAndThreads) {
    RunConfig a, b;
    b.out_dir = "/elsewhere";
    b.data_dir = "other";
    b.threads = 4;
    EXPECT_EQ(fingerprint(a), fingerprint(b));
    EXPECT_EQ(fingerprint(a).size(), 16u);
}

TEST(Fingerprint, TracksResultAffectingFields) {
    const RunConfig base;
    RunConfig seed = base, lambda = base, iters = base;
    seed.seed = 1;
    lambda.model.composition.lambda = 0.1;
    iters.phase1.iterations = 999;
    EXPECT_NE(fingerprint(base), fingerprint(seed));
    EXPECT_NE(fingerprint(base), fingerprint(lambda));
    EXPECT_NE(fingerprint(base), fingerprint(iters));
}

TEST(Fingerprint, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Seeds, DerivedSeedsDifferByTagAndRun) {
    EXPECT_NE(derived_seed(0, 1), derived_seed(0, 2));
    EXPECT_NE(derived_seed(0, 1), derived_seed(1, 1));
    EXPECT_EQ(derived_seed(7, 3), derived_seed(7, 3));
}

TEST(ModelConfig, Validation) {
    ModelConfig c;
    c.patch = 8;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = ModelConfig{};
    c.image_size = 20;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = ModelConfig{};
    c.composition.lambda = -1;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = ModelConfig{};
    EXPECT_EQ(c.latent_channels(), 48u);
    EXPECT_EQ(c.latent_size(), 8u);
}
