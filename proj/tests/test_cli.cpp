#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "unictrl/checkpoint.hpp"
#include "unictrl/cli.hpp"

using namespace unictrl;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    static fs::path p = [] {
        fs::path d = fs::temp_directory_path() / "unictrl_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("unictrl");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(int(argv.size()), argv.data());
}

std::string tiny_train_config() {
    static std::string path = [] {
        const fs::path p = work_dir() / "train_config.json";
        std::ofstream f(p);
        f << R"({
  "train": {"steps": 3, "batch_size": 1, "learning_rate": 0.05, "schedule_T": 100,
            "seed": 9, "out": ")"
          << (work_dir() / "tiny.uctl").string() << R"(", "log_every": 10},
  "model": {"frames": 4, "height": 16, "width": 16, "channels": 4, "patch": 2,
            "model_dim": 32, "head_count": 4, "block_count": 2, "cond_dim": 32,
            "vocab_size": 64}
})";
        return p.string();
    }();
    return path;
}

std::string tiny_ckpt() {
    static std::string path = [] {
        EXPECT_EQ(run_cli({"train", "--config", tiny_train_config()}), 0);
        return (work_dir() / "tiny.uctl").string();
    }();
    return path;
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    json j;
    f >> j;
    return j;
}

}  // namespace

TEST(Cli, TrainWritesCheckpointAndManifest) {
    const std::string ckpt = tiny_ckpt();
    EXPECT_TRUE(fs::exists(ckpt));
    EXPECT_TRUE(fs::exists(ckpt + ".manifest.json"));
    json m = read_json(ckpt + ".manifest.json");
    EXPECT_TRUE(m.contains("final_loss"));
    EXPECT_EQ(m.at("train").at("steps").get<int>(), 3);

    DenoiserModel model = load_checkpoint(ckpt);
    EXPECT_EQ(model.config.model_dim, 32);
}

TEST(Cli, GenerateBaselineEmitsArtifacts) {
    const std::string out = (work_dir() / "gen_base").string();
    EXPECT_EQ(run_cli({"generate", "--ckpt", tiny_ckpt(), "--prompt",
                       "red square moving right", "--seed", "3", "--steps", "6", "--out", out}),
              0);
    EXPECT_TRUE(fs::exists(fs::path(out) / "frame_000.png"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "grid.png"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "video.gif"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "manifest.json"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "run.log"));

    json m = read_json(fs::path(out) / "manifest.json");
    EXPECT_FALSE(m.at("unictrl").get<bool>());
    EXPECT_EQ(m.at("injection_log").size(), 6u);
}

TEST(Cli, GenerateUnictrlLogsInjections) {
    const std::string out = (work_dir() / "gen_uc").string();
    EXPECT_EQ(run_cli({"generate", "--ckpt", tiny_ckpt(), "--prompt",
                       "blue circle moving left", "--seed", "4", "--steps", "6", "--unictrl",
                       "--c", "0.5", "--out", out}),
              0);
    json m = read_json(fs::path(out) / "manifest.json");
    EXPECT_TRUE(m.at("unictrl").get<bool>());
    int injected = 0;
    for (const auto& e : m.at("injection_log")) injected += e.at("injected").get<bool>() ? 1 : 0;
    EXPECT_GT(injected, 0);
    EXPECT_LT(injected, 6);
}

TEST(Cli, EvaluateScoresAnEmittedVideo) {
    const std::string out = (work_dir() / "gen_eval").string();
    ASSERT_EQ(run_cli({"generate", "--ckpt", tiny_ckpt(), "--prompt",
                       "green square moving down", "--seed", "5", "--steps", "4", "--out", out}),
              0);
    EXPECT_EQ(run_cli({"evaluate", "--video", out}), 0);
    json r = read_json(fs::path(out) / "evaluation.json");
    EXPECT_TRUE(r.contains("consistency"));
    EXPECT_TRUE(r.contains("motion"));
    EXPECT_EQ(r.at("prompt").get<std::string>(), "green square moving down");
}

TEST(Cli, AblateAggregatesAcrossSeeds) {
    const std::string out = (work_dir() / "ablate").string();
    EXPECT_EQ(run_cli({"ablate", "--ckpt", tiny_ckpt(), "--prompt", "red square moving right",
                       "--modes", "baseline,only-sac", "--seeds", "1,2", "--steps", "4", "--out",
                       out}),
              0);
    json r = read_json(fs::path(out) / "report.json");
    EXPECT_EQ(r.at("runs").size(), 4u);
    EXPECT_EQ(r.at("modes").at("baseline").at("count").get<int>(), 2);
    EXPECT_EQ(r.at("modes").at("only-sac").at("count").get<int>(), 2);
    EXPECT_TRUE(fs::exists(fs::path(out) / "baseline" / "seed_1" / "video.gif"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "only-sac" / "seed_2" / "manifest.json"));
}

TEST(Cli, MissingCheckpointFailsWithIoExitCode) {
    const int rc = run_cli({"generate", "--ckpt", "/nonexistent/model.uctl", "--prompt", "x",
                            "--out", (work_dir() / "never").string()});
    EXPECT_EQ(rc, exit_code(ErrorCategory::io));
}

TEST(Cli, UnknownFlagFailsWithUsageExitCode) {
    EXPECT_EQ(run_cli({"generate", "--bogus"}), exit_code(ErrorCategory::usage));
    EXPECT_EQ(run_cli({}), exit_code(ErrorCategory::usage));
}

TEST(Cli, UnknownAblationModeFailsWithUsageExitCode) {
    EXPECT_EQ(run_cli({"ablate", "--ckpt", tiny_ckpt(), "--prompt", "x", "--modes", "mystery",
                       "--seeds", "1", "--out", (work_dir() / "abl_bad").string()}),
              exit_code(ErrorCategory::usage));
}

TEST(Cli, ErrorLineIsSingleAndMachineParseable) {
    // Drive the real binary so the stderr contract is observable.
    const std::string err_file = (work_dir() / "stderr.txt").string();
    const std::string cmd = std::string(UNICTRL_CLI_PATH) +
                            " generate --ckpt /nonexistent.uctl --prompt x 2> " + err_file +
                            " > /dev/null";
    const int rc = std::system(cmd.c_str());
    EXPECT_NE(rc, 0);
    std::ifstream f(err_file);
    std::string line, extra;
    ASSERT_TRUE(std::getline(f, line));
    EXPECT_EQ(line.rfind("error:io: ", 0), 0u) << line;
    EXPECT_FALSE(std::getline(f, extra)) << "expected exactly one stderr line, got: " << extra;
}

TEST(Cli, ManifestReproducesTheRunExactly) {
    const std::string out = (work_dir() / "gen_repro").string();
    ASSERT_EQ(run_cli({"generate", "--ckpt", tiny_ckpt(), "--prompt",
                       "red circle moving up", "--seed", "11", "--steps", "5", "--unictrl",
                       "--c", "0.6", "--out", out}),
              0);
    json mj = read_json(fs::path(out) / "manifest.json");
    RunManifest m = manifest_from_json(mj);

    DenoiserModel model = load_checkpoint(m.checkpoint_path);
    SampleOptions opts;
    opts.unictrl = m.unictrl;
    opts.ctrl = m.ctrl;
    GeneratedVideo again = run_sampler(model, m.prompt, m.seed, m.sampler, opts);

    VideoFrames emitted = load_video_frames(out);
    Image8 a = frame_to_image(again.frames, 2);
    Image8 b = frame_to_image(emitted, 2);
    EXPECT_EQ(a.rgb, b.rgb);
}
