#include <gtest/gtest.h>

#include <filesystem>

#include "taro/bench.hpp"

using namespace taro;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny()
{
    ExperimentConfig c = presets::desk_defense();
    c.name = "tiny";
    c.trials = 2;
    c.samples = 40;
    c.dataset.n_train = 256;
    c.classifier.steps = 100;
    c.arms[1].taro.iters = 3;
    c.attacks[0].steps = 3;
    c.attacks[0].n_eot = 2;
    c.attacks[1].steps = 3;
    c.attacks[1].n_eot = 2;
    return c;
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("taro-bench-" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST(Config, PresetsRoundTripToFixedPoint)
{
    for (const auto& name : experiment_presets()) {
        const ExperimentConfig c = experiment_preset(name);
        c.validate();
        const std::string once = serialize_config(c);
        const std::string twice = serialize_config(parse_config(once));
        EXPECT_EQ(once, twice) << name;
    }
}

TEST(Config, RejectsBadInput)
{
    const std::string good = serialize_config(presets::desk_defense());
    json j = json::parse(good);
    j["trails"] = 3;
    EXPECT_THROW(parse_config(j.dump()), Error);
    j = json::parse(good);
    j.erase("version");
    EXPECT_THROW(parse_config(j.dump()), Error);
    j = json::parse(good);
    j["version"] = 2;
    EXPECT_THROW(parse_config(j.dump()), Error);
    j = json::parse(good);
    j["arms"][1]["taro"]["gamma"] = -1.0;
    EXPECT_THROW(parse_config(j.dump()), Error);
    j = json::parse(good);
    j["arms"][1]["label"] = "undefended";
    EXPECT_THROW(parse_config(j.dump()), Error);
    EXPECT_THROW(parse_config("{not json"), Error);
    EXPECT_THROW(experiment_preset("cifar"), Error);
}

TEST(Config, FingerprintIgnoresOutputPath)
{
    ExperimentConfig a = presets::desk_defense(), b = a;
    b.out = "elsewhere";
    EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
    b.seed = 1;
    EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
}

TEST(Serialize, ModelsRoundTripBitExact)
{
    const fs::path dir = scratch("models");
    fs::create_directories(dir);
    Rng rng(4);
    const Dataset d = synth_dataset("tri-2d", 64, rng);
    const Classifier clf = train_classifier(d, ClassifierSpec{}, rng);
    save((dir / "clf.json").string(), "classifier", clf);
    EXPECT_TRUE(load<Classifier>((dir / "clf.json").string(), "classifier") == clf);
    save((dir / "data.json").string(), "dataset", d);
    const Dataset d2 = load<Dataset>((dir / "data.json").string(), "dataset");
    EXPECT_EQ(d2.x, d.x);
    EXPECT_EQ(d2.y, d.y);
    const PerturbationModel p = PerturbationModel::init(2, {8}, rng);
    save((dir / "pert.json").string(), "pert", p);
    EXPECT_TRUE(load<PerturbationModel>((dir / "pert.json").string(), "pert") == p);
    ResidualCorpus c;
    c.residuals = rng.normal_tensor({5, 2});
    c.eps = 0.3;
    c.seed = 77;
    save((dir / "corpus.json").string(), "corpus", c);
    EXPECT_TRUE(load<ResidualCorpus>((dir / "corpus.json").string(), "corpus") == c);
    const MlpDenoiser m = MlpDenoiser::init(2, {6}, 0.7, rng);
    const MlpDenoiser m2 = mlp_denoiser_from_json(json::parse(mlp_denoiser_to_json(m).dump()));
    EXPECT_TRUE(m2.net() == m.net());
    EXPECT_EQ(m2.sigma_data(), m.sigma_data());
    EXPECT_THROW(load<Classifier>((dir / "pert.json").string(), "classifier"), Error);
    fs::remove_all(dir);
}

TEST(Run, DeterministicWithExpectedShape)
{
    const ExperimentConfig c = tiny();
    const fs::path a = scratch("run-a"), b = scratch("run-b");
    const auto ra = run_experiment(c, a.string());
    run_experiment(c, b.string());
    for (const auto& f : report_body_files()) EXPECT_EQ(read_text((a / f).string()), read_text((b / f).string())) << f;
    EXPECT_TRUE(fs::exists(a / "runtime.json"));
    EXPECT_EQ(ra.rows.size(), c.samples * c.trials * c.arms.size() * c.attacks.size());
    for (const auto& arm : ra.arms) {
        EXPECT_EQ(arm.clean.trials.size(), c.trials);
        for (const auto& r : arm.attacks) {
            EXPECT_GE(r.mean, 0.0);
            EXPECT_LE(r.mean, 1.0);
            EXPECT_LE(arm.worst.mean, r.mean);
        }
    }
    // The summary is reproducible from the flushed rows alone.
    const auto re = summarize(a.string());
    EXPECT_EQ(summary_csv(re), read_text((a / "summary.csv").string()));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Run, ErrorsNameTheStage)
{
    ExperimentConfig c = tiny();
    c.attacks[0].mode = GradientMode::FullUnroll;
    c.attacks[0].max_tape_nodes = 10;
    try {
        run_experiment(c);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("stage evaluate undefended"), std::string::npos) << e.what();
    }
}

TEST(Stats, MeanSd)
{
    const auto m = MeanSd::of({0.5, 0.7, 0.9});
    EXPECT_DOUBLE_EQ(m.mean, 0.7);
    EXPECT_NEAR(m.sd, 0.2, 1e-15);
    EXPECT_EQ(MeanSd::of({0.4}).sd, 0.0);
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
