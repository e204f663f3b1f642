// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avloc/datasim.hpp"
#include "avloc/detect.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace avloc;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "avloc");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        unsetenv("DEL_SEED");
        dir_ = fs::temp_directory_path() / ("avloc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        const json cfg = {
            {"data", {{"num_videos", 10}, {"T", 16}, {"d_v", 8}, {"d_a", 8}, {"code_dim", 4}, {"max_duration", 8}}},
            {"model", {{"width", 8}, {"heads", 2}, {"ffn_hidden", 16}, {"levels", 3}, {"pool_tokens", 4}}},
            {"train", {{"epochs", 2}, {"warmup_epochs", 1}, {"batch_size", 4}}}};
        std::ofstream(config()) << cfg.dump(2);
    }
    void TearDown() override {
        unsetenv("DEL_SEED");
        fs::remove_all(dir_);
    }
    std::string config() const { return (dir_ / "toy.json").string(); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, cli::kUsage);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
    EXPECT_EQ(run({"generate", "--out", path("g"), "--bogus"}).code, cli::kUsage);
    EXPECT_EQ(run({"generate"}).code, cli::kUsage);
    EXPECT_EQ(run({"generate", "--out", path("g"), "--threads", "0"}).code, cli::kUsage);
    EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST_F(Cli, ConfigErrors) {
    auto r = run({"generate", "--config", path("missing.json"), "--out", path("g")});
    EXPECT_EQ(r.code, cli::kConfig);
    EXPECT_NE(r.err.find("missing.json"), std::string::npos);
    std::ofstream(path("broken.json")) << "{not json";
    EXPECT_EQ(run({"generate", "--config", path("broken.json"), "--out", path("g")}).code, cli::kConfig);
    EXPECT_EQ(run({"generate", "--config", config(), "--set", "data.nope=1", "--out", path("g")}).code, cli::kConfig);
    EXPECT_EQ(run({"generate", "--config", config(), "--set", "data.T=-4", "--out", path("g")}).code, cli::kConfig);
    setenv("DEL_SEED", "abc", 1);
    EXPECT_EQ(run({"generate", "--config", config(), "--out", path("g")}).code, cli::kConfig);
}

TEST_F(Cli, MissingInputs) {
    EXPECT_EQ(run({"train", "--config", config(), "--data", path("nodata"), "--out", path("t")}).code, cli::kInput);
    EXPECT_EQ(run({"eval", "--predictions", path("none.json"), "--out", path("e")}).code, cli::kInput);
    EXPECT_EQ(run({"predict", "--checkpoint", path("none.delc"), "--out", path("p")}).code, cli::kInput);
    std::ofstream(path("bad.delc")) << "XXXX";
    EXPECT_EQ(run({"predict", "--checkpoint", path("bad.delc"), "--out", path("p")}).code, cli::kInput);
}

TEST_F(Cli, GroundTruthAsPredictionsScoresOne) {
    ASSERT_EQ(run({"generate", "--config", config(), "--out", path("data")}).code, cli::kOk);
    const auto ds = data::load_dataset(path("data"));
    std::vector<VideoPrediction> preds;
    for (auto i : ds.eval) {
        VideoPrediction p{ds.annotations[i].id, {}};
        for (const auto& e : ds.annotations[i].events) p.events.push_back({e.start, e.end, e.label, 1.0});
        preds.push_back(p);
    }
    detect::save_predictions(path("gt.json"), preds);
    const auto r = run({"eval", "--predictions", path("gt.json"), "--data", path("data"), "--out", path("ev")});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(read_json(path("ev/eval_report.json"))["average_map"].get<double>(), 1.0);
    EXPECT_TRUE(fs::exists(path("ev/eval_report.csv")));
    EXPECT_EQ(slurp(path("ev/pr_curve.svg")).rfind("<svg", 0), 0u);

    preds.push_back({"stranger", {{0, 1, 0, 0.5}}});
    detect::save_predictions(path("gt2.json"), preds);
    EXPECT_EQ(run({"eval", "--predictions", path("gt2.json"), "--data", path("data"), "--out", path("ev2")}).code,
              cli::kInput);
}

TEST_F(Cli, GenerateTrainPredictEvalPipeline) {
    ASSERT_EQ(run({"generate", "--config", config(), "--out", path("data")}).code, cli::kOk);
    EXPECT_TRUE(fs::exists(path("data/manifest.json")));
    EXPECT_EQ(read_json(path("data/run_manifest.json"))["command"], "generate");

    auto r = run({"train", "--config", config(), "--data", path("data"), "--out", path("run"), "--threads", "2"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    for (const char* f : {"checkpoint.delc", "metrics.csv", "loss_curve.svg", "run_manifest.json"})
        EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
    const json man = read_json(path("run/run_manifest.json"));
    EXPECT_EQ(man["command"], "train");
    EXPECT_EQ(man["config"]["train"]["epochs"], 2);
    EXPECT_EQ(man["seed"]["train"], 7);
    EXPECT_TRUE(man.contains("started") && man.contains("finished"));
    EXPECT_EQ(man["artifacts"]["checkpoint"], path("run/checkpoint.delc"));

    r = run({"predict", "--checkpoint", path("run/checkpoint.delc"), "--data", path("data"), "--out", path("pred"),
             "--set", "detect.threshold=0.01"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(detect::load_predictions(path("pred/predictions.json")).size(), 2u);
    r = run({"eval", "--predictions", path("pred/predictions.json"), "--data", path("data"), "--out", path("ev")});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const json rep = read_json(path("ev/eval_report.json"));
    ASSERT_TRUE(rep.contains("average_map"));
    EXPECT_GE(rep["average_map"].get<double>(), 0.0);
    EXPECT_EQ(rep["thresholds"].size(), 9u);
}

TEST_F(Cli, RerunFromManifestIsIdentical) {
    ASSERT_EQ(run({"train", "--config", config(), "--set", "train.seed=11", "--out", path("a")}).code, cli::kOk);
    ASSERT_EQ(run({"train", "--config", path("a/run_manifest.json"), "--out", path("b")}).code, cli::kOk);
    EXPECT_EQ(slurp(path("a/metrics.csv")), slurp(path("b/metrics.csv")));
    EXPECT_EQ(slurp(path("a/checkpoint.delc")), slurp(path("b/checkpoint.delc")));
    EXPECT_EQ(read_json(path("b/run_manifest.json"))["seed"]["train"], 11);
}

TEST_F(Cli, ResumeMatchesUnbrokenRun) {
    ASSERT_EQ(run({"train", "--config", config(), "--out", path("full")}).code, cli::kOk);
    ASSERT_EQ(run({"train", "--config", config(), "--stop-after", "1", "--out", path("half")}).code, cli::kOk);
    EXPECT_NE(slurp(path("full/checkpoint.delc")), slurp(path("half/checkpoint.delc")));
    ASSERT_EQ(run({"train", "--resume", path("half/checkpoint.delc"), "--out", path("rest")}).code, cli::kOk);
    EXPECT_EQ(slurp(path("full/checkpoint.delc")), slurp(path("rest/checkpoint.delc")));
    EXPECT_EQ(run({"train", "--resume", path("half/checkpoint.delc"), "--config", config(), "--out", path("x")}).code,
              cli::kConfig);
}

TEST_F(Cli, SeedFromEnvironment) {
    setenv("DEL_SEED", "123", 1);
    ASSERT_EQ(run({"generate", "--config", config(), "--out", path("s1")}).code, cli::kOk);
    const json man = read_json(path("s1/run_manifest.json"));
    EXPECT_EQ(man["seed"]["data"], 123);
    EXPECT_EQ(man["seed"]["train"], 123);
    unsetenv("DEL_SEED");
    ASSERT_EQ(run({"generate", "--config", config(), "--out", path("s2")}).code, cli::kOk);
    EXPECT_NE(slurp(path("s1/features/" + data::load_dataset(path("s1")).videos[0].id + ".delf")),
              slurp(path("s2/features/" + data::load_dataset(path("s2")).videos[0].id + ".delf")));
}
