#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "bisnn/experiment.hpp"
#include "oracles.hpp"

using namespace bisnn;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() / ("bisnn_exp_" + tag + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

TrainRunConfig small(Rule rule) {
    TrainRunConfig c;
    c.rule = rule;
    c.epochs = 3;
    c.batch_size = 8;
    c.layers = {8};
    c.n_units = 5;
    c.steps = 20;
    c.n_per_class = 16;
    c.test_per_class = 8;
    c.ensemble_size = 3;
    return c;
}

} // namespace

TEST(Config, JsonRoundTrip) {
    TrainRunConfig c = small(Rule::st);
    c.eta = 0.05;
    c.rho = 0.3;
    c.layers = {7, 5};
    c.seeds.gumbel = 99;
    c.aggregation = Aggregation::last_step;
    c.dvs_classes = {3, 8};
    const auto j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)), j);
    EXPECT_EQ(config_from_json(nlohmann::json::parse(j.dump())).layers, (std::vector<std::size_t>{7, 5}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW((void)config_from_json({{"epoch", 3}}), ConfigError);
    EXPECT_THROW((void)config_from_json({{"rule", "adam"}}), ConfigError);
    EXPECT_THROW((void)config_from_json({{"epochs", "many"}}), ConfigError);
    EXPECT_THROW((void)config_from_json(nlohmann::json::array()), ConfigError);
    TrainRunConfig c = small(Rule::bayes);
    c.dataset = "imagenet";
    EXPECT_THROW(c.validate(), ConfigError);
    c = small(Rule::bayes);
    c.rho = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small(Rule::st);
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small(Rule::st);
    c.dataset = "file";
    c.data_path = "/nonexistent/data.json";
    EXPECT_THROW(c.validate(), Error);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
    TrainRunConfig c = small(Rule::bayes);
    c.epochs = 0;
    const auto data = prepare_data(c);
    const auto r = train(c, data.train);
    EXPECT_TRUE(r.history.empty());
    const auto init = initial_checkpoint(c, data.train);
    ASSERT_EQ(r.checkpoint.parameters.size(), init.parameters.size());
    EXPECT_EQ(r.checkpoint.parameters[0], init.parameters[0]);
    EXPECT_EQ(r.checkpoint.epoch, 0U);
}

TEST(Train, EpochOrderIsAPermutation) {
    const auto a = epoch_order(37, 2, 1);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 37; ++i) EXPECT_EQ(sorted[i], i);
    EXPECT_EQ(a, epoch_order(37, 2, 1));
    EXPECT_NE(a, epoch_order(37, 2, 2));
}

TEST(RunTrain, ByteIdenticalRerunAndArtifacts) {
    TempDir d1("a"), d2("b");
    TrainRunConfig c = small(Rule::bayes);
    c.output_dir = d1.path().string();
    const auto first = run_train(c);
    c.output_dir = d2.path().string();
    (void)run_train(c);
    for (const char* f : {"metrics.csv", "checkpoint.json", "metrics.json"})
        EXPECT_EQ(slurp(d1.path() / f), slurp(d2.path() / f)) << f;
    const auto csv = slurp(d1.path() / "metrics.csv");
    EXPECT_EQ(csv.rfind(csv_header() + "\n", 0), 0U);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

    const auto manifest = nlohmann::json::parse(slurp(d1.path() / "manifest.json"));
    EXPECT_EQ(manifest["config"]["rho"], 1e-4);
    EXPECT_EQ(manifest["config"]["layers"], nlohmann::json::array({8}));

    const auto loaded = load_checkpoint((d1.path() / "checkpoint.json").string());
    const auto& ck = first.result.checkpoint;
    EXPECT_EQ(loaded.rule, Rule::bayes);
    EXPECT_EQ(loaded.epoch, 3U);
    ASSERT_EQ(loaded.parameters.size(), ck.parameters.size());
    for (std::size_t l = 0; l < ck.parameters.size(); ++l) EXPECT_EQ(loaded.parameters[l], ck.parameters[l]);
    EXPECT_EQ(loaded.network.readouts()[0].matrix, ck.network.readouts()[0].matrix);
}

TEST(RunTrain, FinalRowMatchesEvaluation) {
    for (Rule rule : {Rule::st, Rule::bayes, Rule::fp}) {
        const TrainRunConfig c = small(rule);
        const auto data = prepare_data(c);
        const auto r = train(c, data.train);
        ASSERT_EQ(r.history.size(), 3U);
        const auto m = evaluate(r.checkpoint, data.train, 3, 6);
        EXPECT_EQ(r.history.back().train_accuracy, m[0].metrics.accuracy) << to_string(rule);
        EXPECT_EQ(m.size(), rule == Rule::bayes ? 2U : 1U);
        EXPECT_EQ(m[0].predictor, rule == Rule::fp ? "full-precision" : "MAP");
        EXPECT_EQ(std::isnan(r.history.back().kl), rule != Rule::bayes);
        for (const auto& row : r.history) EXPECT_TRUE(std::isfinite(row.loss));
    }
}

TEST(Evaluate, EnsembleDependsOnSeedMapDoesNot) {
    TrainRunConfig c = small(Rule::bayes);
    c.rho = 1.0; // keeps the posterior broad
    const auto data = prepare_data(c);
    const auto r = train(c, data.train);
    const auto a = evaluate(r.checkpoint, *data.test, 3, 1);
    const auto b = evaluate(r.checkpoint, *data.test, 3, 2);
    EXPECT_EQ(a[0].metrics.nll, b[0].metrics.nll);
    EXPECT_EQ(a[0].metrics.accuracy, b[0].metrics.accuracy);
    EXPECT_NE(a[1].metrics.nll, b[1].metrics.nll);
    EXPECT_EQ(a[1].predictor, "ensemble-3");
    const auto j = run_eval(r.checkpoint, *data.test, 3, 1, 15, Aggregation::time_average, false);
    EXPECT_EQ(j["metrics"].size(), 1U);
    EXPECT_EQ(j["rule"], "bayes");
}

TEST(Sweep, SingleRhoWithStReference) {
    TempDir dir("sweep");
    TrainRunConfig c = small(Rule::bayes);
    c.epochs = 2;
    c.output_dir = dir.path().string();
    SweepOptions opt;
    opt.grid_resolution = 6;
    opt.include_st = true;
    const auto res = run_sweep(c, {1e-4}, opt);
    ASSERT_EQ(res.entries.size(), 1U);
    ASSERT_TRUE(res.st.has_value());
    EXPECT_EQ(res.entries[0].grids.map.size(), 36U);
    EXPECT_EQ(res.entries[0].grids.ensemble.size(), 36U);
    EXPECT_TRUE(res.st->grids.ensemble.empty());
    EXPECT_GE(res.st_disagreement, 0.0);
    EXPECT_LE(res.st_disagreement, 1.0);
    const auto manifest = nlohmann::json::parse(slurp(dir.path() / "sweep_manifest.json"));
    EXPECT_EQ(manifest["rho_values"], nlohmann::json::array({1e-4}));
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "rho_0.0001" / "grid_ensemble.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "st" / "grid_map.csv"));
    const auto table = slurp(dir.path() / "sweep.csv");
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
    EXPECT_THROW((void)run_sweep(c, {}, opt), ConfigError);
}

TEST(Grid, DisagreementCountsDecisionFlips) {
    EXPECT_DOUBLE_EQ(grid_disagreement({0.1, 0.6, 0.5, 0.49}, {0.2, 0.4, 0.5, 0.51}), 0.5);
    EXPECT_THROW((void)grid_disagreement({0.1}, {}), ShapeError);
}

TEST(RunTrain, OneDimRegression) {
    TrainRunConfig c = small(Rule::bayes);
    c.dataset = "onedim";
    c.epochs = 2;
    const auto out = run_train(c);
    ASSERT_TRUE(out.data.test.has_value());
    EXPECT_EQ(out.data.test->examples.size(), 201U);
    EXPECT_TRUE(std::isfinite(out.result.history.back().train_mse));
    EXPECT_TRUE(std::isnan(out.result.history.back().train_accuracy));
    EXPECT_TRUE(out.final_metrics["test"][0].contains("mse"));
}

// Synthetic recordings: digit 0 fires in the left half of the crop, digit 1
// in the right half.
TEST(RunTrain, DvsPipelineOnSyntheticRecordings) {
    TempDir dir("dvs");
    std::mt19937_64 gen(21);
    for (int digit : {0, 1})
        for (int i = 1; i <= 12; ++i) {
            std::vector<oracle::RawEvent> ev;
            for (int k = 0; k < 6000; ++k) {
                const int x = 32 + static_cast<int>(gen() % 32) + 32 * digit;
                ev.push_back({static_cast<std::uint32_t>(k * 30), x, 32 + static_cast<int>(gen() % 64),
                              gen() % 2 == 1});
            }
            char name[64];
            std::snprintf(name, sizeof name, "mnist_%d_scale04_%04d.aedat", digit, i);
            const auto bytes = oracle::encode_aedat(ev);
            std::ofstream os(dir.path() / name, std::ios::binary);
            os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        }
    TrainRunConfig c = small(Rule::st);
    c.dataset = "dvs";
    c.data_path = dir.path().string();
    c.epochs = 20;
    c.layers = {16};
    c.eta = 0.05;
    const auto out = run_train(c);
    EXPECT_EQ(out.data.train.n_inputs, 2048U);
    EXPECT_EQ(out.data.train.examples.size(), 18U);
    ASSERT_TRUE(out.data.test.has_value());
    EXPECT_EQ(out.data.test->examples.size(), 6U);
    EXPECT_GE(out.final_metrics["test"][0]["accuracy"].get<double>(), 0.8);

    c.data_path = (dir.path() / "missing").string();
    EXPECT_THROW((void)run_train(c), Error);
}
