#ifndef UNICTRL_CLI_HPP
#define UNICTRL_CLI_HPP

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "unictrl/checkpoint.hpp"
#include "unictrl/pipeline.hpp"
#include "unictrl/report.hpp"
#include "unictrl/trainer.hpp"
#include "unictrl/version.hpp"

namespace unictrl {

namespace cli_detail {

inline json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCategory::io, "cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail_config("config file " + path + ": " + e.what());
    }
    return j;
}

inline std::string join_args(int argc, const char* const* argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += " ";
        s += argv[i];
    }
    return s;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline SamplerConfig sampler_from_config(const json& cfg) {
    SamplerConfig s;
    if (cfg.contains("sampler")) {
        const json& j = cfg.at("sampler");
        maybe(j, "steps", s.steps);
        maybe(j, "eta", s.eta);
        maybe(j, "guidance", s.guidance);
        maybe(j, "schedule_T", s.schedule_T);
        maybe(j, "beta_start", s.beta_start);
        maybe(j, "beta_end", s.beta_end);
    }
    return s;
}

inline DenoiserConfig model_from_config(const json& cfg) {
    DenoiserConfig m;
    if (cfg.contains("model")) {
        const json& j = cfg.at("model");
        maybe(j, "frames", m.frames);
        maybe(j, "height", m.height);
        maybe(j, "width", m.width);
        maybe(j, "channels", m.channels);
        maybe(j, "patch", m.patch);
        maybe(j, "model_dim", m.model_dim);
        maybe(j, "head_count", m.head_count);
        maybe(j, "block_count", m.block_count);
        maybe(j, "cond_dim", m.cond_dim);
        maybe(j, "vocab_size", m.vocab_size);
        maybe(j, "max_text_tokens", m.max_text_tokens);
    }
    return m;
}

inline TrainConfig train_from_config(const json& cfg) {
    TrainConfig t;
    if (cfg.contains("train")) {
        const json& j = cfg.at("train");
        maybe(j, "steps", t.steps);
        maybe(j, "batch_size", t.batch_size);
        maybe(j, "learning_rate", t.learning_rate);
        maybe(j, "schedule_T", t.schedule_T);
        maybe(j, "beta_start", t.beta_start);
        maybe(j, "beta_end", t.beta_end);
        maybe(j, "null_cond_prob", t.null_cond_prob);
        maybe(j, "seed", t.seed);
        maybe(j, "out", t.out_path);
        maybe(j, "log_every", t.log_every);
    }
    return t;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

inline int cmd_train(const std::string& config_path, uint64_t seed, bool seed_set,
                     const std::string& out, const std::string& command_line) {
    json cfg = cli_detail::load_json_file(config_path);
    TrainConfig tc = cli_detail::train_from_config(cfg);
    DenoiserConfig mc = cli_detail::model_from_config(cfg);
    if (seed_set) tc.seed = seed;
    if (!out.empty()) tc.out_path = out;

    cli_detail::Timer timer;
    TrainResult result = train(tc, mc, [](int step, float loss) {
        std::printf("step %d  loss %.5f\n", step, loss);
        std::fflush(stdout);
    });
    save_checkpoint(result.model, tc.out_path);

    json manifest{{"command", command_line},
                  {"tool_version", kToolVersion},
                  {"checkpoint", tc.out_path},
                  {"final_loss", result.loss_history.back()},
                  {"first_window_mean_loss", result.first_window_mean},
                  {"last_window_mean_loss", result.last_window_mean},
                  {"train",
                   json{{"steps", tc.steps},
                        {"batch_size", tc.batch_size},
                        {"learning_rate", tc.learning_rate},
                        {"schedule_T", tc.schedule_T},
                        {"beta_start", tc.beta_start},
                        {"beta_end", tc.beta_end},
                        {"null_cond_prob", tc.null_cond_prob},
                        {"seed", tc.seed},
                        {"log_every", tc.log_every}}},
                  {"model", model_config_to_json(mc)}};
    const std::string manifest_path = tc.out_path + ".manifest.json";
    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) fail(ErrorCategory::io, "cannot write " + manifest_path);
    mf << manifest.dump(2) << "\n";

    std::printf("trained %d steps in %.1fs; first/last window loss %.4f -> %.4f\n", tc.steps,
                timer.seconds(), result.first_window_mean, result.last_window_mean);
    std::printf("checkpoint: %s\n", tc.out_path.c_str());
    return 0;
}

struct GenerateFlags {
    std::string ckpt;
    std::string prompt;
    uint64_t seed = 0;
    std::string out_dir = "out";
    bool unictrl = false;
    float c = 1.0f;
    bool no_sac = false, no_mi = false, no_ss = false;
    bool kv_mismatch = false;
    std::string q_scope = "all";
    bool late_window = false;
    SamplerConfig sampler;
};

inline int cmd_generate(const GenerateFlags& flags, const std::string& command_line) {
    DenoiserModel model = load_checkpoint(flags.ckpt);
    cli_detail::Timer timer;

    GeneratedVideo video;
    if (flags.unictrl) {
        UniCtrlConfig ctrl;
        ctrl.enable_sac = !flags.no_sac;
        ctrl.enable_mi = !flags.no_mi;
        ctrl.enable_ss = !flags.no_ss;
        ctrl.motion_degree = flags.c;
        ctrl.kv_mode = flags.kv_mismatch ? UniCtrlConfig::KvMode::value_only_mismatch
                                         : UniCtrlConfig::KvMode::matched;
        ctrl.q_injection_scope = flags.q_scope == "cross" ? UniCtrlConfig::QScope::cross_only
                                                          : UniCtrlConfig::QScope::all_attention;
        ctrl.use_late_window = flags.late_window;
        video = sample_unictrl(model, flags.prompt, flags.seed, flags.sampler, ctrl);
    } else {
        video = sample_baseline(model, flags.prompt, flags.seed, flags.sampler);
    }
    video.manifest.command = command_line;
    video.manifest.checkpoint_path = flags.ckpt;
    RunManifest manifest = emit_video(video, flags.out_dir);

    std::ofstream log(flags.out_dir + "/run.log", std::ios::trunc);
    log << "wall_seconds=" << timer.seconds() << "\n";
    log << "steps=" << flags.sampler.steps << "\n";

    int injected = 0;
    for (const auto& e : manifest.injection_log) injected += e.injected ? 1 : 0;
    std::printf("%s: %d frames -> %s (%d/%d steps injected, %.1fs)\n",
                flags.unictrl ? "unictrl" : "baseline", video.frames.frame_count,
                flags.out_dir.c_str(), injected, flags.sampler.steps, timer.seconds());
    return 0;
}

inline int cmd_evaluate(const std::string& video_dir, const std::string& embedder_name,
                        int block, int radius) {
    VideoFrames v = load_video_frames(video_dir);
    FrameEmbedder embedder =
        embedder_name == "backbone" ? FrameEmbedder::backbone() : FrameEmbedder::pixel();
    MetricReport r = evaluate_video(v, embedder, block, radius);
    r.mode = "evaluate";

    // Carry the prompt/seed through when the directory has a manifest.
    const std::string manifest_path = video_dir + "/manifest.json";
    if (std::filesystem::exists(manifest_path)) {
        RunManifest m = manifest_from_json(cli_detail::load_json_file(manifest_path));
        r.prompt = m.prompt;
        r.seed = m.seed;
    }

    const json doc = metric_report_to_json(r);
    report_detail::write_text(video_dir + "/evaluation.json", doc.dump(2) + "\n");
    std::printf("%s\n", doc.dump(2).c_str());
    return 0;
}

inline int cmd_ablate(const std::string& ckpt, const std::string& prompt,
                      const std::vector<std::string>& modes, const std::vector<uint64_t>& seeds,
                      const std::string& out_dir, const SamplerConfig& sampler,
                      const std::string& command_line) {
    if (modes.empty()) fail(ErrorCategory::usage, "ablate: --modes must list at least one mode");
    if (seeds.empty()) fail(ErrorCategory::usage, "ablate: --seeds must list at least one seed");
    DenoiserModel model = load_checkpoint(ckpt);

    struct Run {
        std::string mode;
        uint64_t seed;
    };
    std::vector<Run> runs;
    for (const auto& m : modes)
        for (uint64_t s : seeds) runs.push_back({m, s});

    // Independent runs fan out across worker threads; each run samples
    // sequentially inside.
    std::vector<std::vector<AblationEntry>> results(runs.size());
    parallel_for(int64_t(runs.size()), [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
            results[size_t(i)] =
                ablation_run(model, prompt, runs[size_t(i)].seed, sampler, runs[size_t(i)].mode);
        }
    }, 1);

    std::vector<MetricReport> reports;
    for (size_t i = 0; i < runs.size(); ++i) {
        for (auto& entry : results[i]) {
            std::string sub = entry.mode;
            for (char& ch : sub) {
                if (ch == ':' || ch == '=') ch = '_';
            }
            const std::string dir =
                out_dir + "/" + sub + "/seed_" + std::to_string(runs[i].seed);
            entry.video.manifest.command = command_line;
            entry.video.manifest.checkpoint_path = ckpt;
            emit_video(entry.video, dir);
            reports.push_back(entry.report);
        }
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    emit_report(reports, out_dir + "/report.json");
    std::printf("ablate: %zu runs -> %s/report.json\n", reports.size(), out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"desk-scale video diffusion lab with cross-frame attention control"};
    app.require_subcommand(1);
    const std::string command_line = cli_detail::join_args(argc, argv);

    int threads = int(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    app.add_option("--threads", threads, "worker thread count (results do not depend on it)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a sprite denoiser");
    std::string train_config;
    uint64_t train_seed = 0;
    std::string train_out;
    train_cmd->add_option("--config", train_config, "JSON config file")->required();
    auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "seed override");
    train_cmd->add_option("--out", train_out, "checkpoint path override");

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "sample a video from a checkpoint");
    GenerateFlags gf;
    std::string gen_config;
    gen_cmd->add_option("--ckpt", gf.ckpt, "checkpoint file")->required();
    gen_cmd->add_option("--prompt", gf.prompt, "text prompt")->required();
    gen_cmd->add_option("--seed", gf.seed, "sampling seed");
    auto* gen_steps = gen_cmd->add_option("--steps", gf.sampler.steps, "inference steps");
    auto* gen_guidance = gen_cmd->add_option("--guidance", gf.sampler.guidance, "guidance weight");
    auto* gen_eta = gen_cmd->add_option("--eta", gf.sampler.eta, "stochasticity in [0,1]");
    gen_cmd->add_flag("--unictrl", gf.unictrl, "enable the two-branch controlled sampler");
    gen_cmd->add_option("--c", gf.c, "motion injection degree in [0,1]");
    gen_cmd->add_flag("--no-sac", gf.no_sac, "disable frame-0 key/value control");
    gen_cmd->add_flag("--no-mi", gf.no_mi, "disable motion query injection");
    gen_cmd->add_flag("--no-ss", gf.no_ss, "disable per-step branch synchronization");
    gen_cmd->add_flag("--kv-mismatch", gf.kv_mismatch, "inject only values from frame 0");
    gen_cmd->add_option("--q-scope", gf.q_scope, "query injection scope: all|cross")
        ->check(CLI::IsMember({"all", "cross"}));
    gen_cmd->add_flag("--late-window", gf.late_window,
                      "debug: inject on late steps instead of early ones");
    gen_cmd->add_option("--out", gf.out_dir, "output directory");
    gen_cmd->add_option("--config", gen_config, "JSON config file (flags win)");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score an emitted video directory");
    std::string eval_dir, eval_embedder = "pixel";
    int eval_block = 4, eval_radius = 4;
    eval_cmd->add_option("--video", eval_dir, "video directory")->required();
    eval_cmd->add_option("--embedder", eval_embedder, "pixel|backbone")
        ->check(CLI::IsMember({"pixel", "backbone"}));
    eval_cmd->add_option("--block", eval_block, "flow block size");
    eval_cmd->add_option("--radius", eval_radius, "flow search radius");

    // ablate
    auto* abl_cmd = app.add_subcommand("ablate", "run ablation modes across seeds");
    std::string abl_ckpt, abl_prompt, abl_out = "ablation";
    std::vector<std::string> abl_modes;
    std::vector<uint64_t> abl_seeds;
    std::string abl_config;
    abl_cmd->add_option("--ckpt", abl_ckpt, "checkpoint file")->required();
    abl_cmd->add_option("--prompt", abl_prompt, "text prompt")->required();
    abl_cmd->add_option("--modes", abl_modes, "comma-separated mode list")
        ->required()
        ->delimiter(',');
    abl_cmd->add_option("--seeds", abl_seeds, "comma-separated seed list")
        ->required()
        ->delimiter(',');
    abl_cmd->add_option("--out", abl_out, "output directory");
    int abl_steps = SamplerConfig{}.steps;
    auto* abl_steps_opt = abl_cmd->add_option("--steps", abl_steps, "inference steps");
    abl_cmd->add_option("--config", abl_config, "JSON config file (flags win)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "error:usage: %s\n", e.what());
        return exit_code(ErrorCategory::usage);
    }

    try {
        set_thread_count(threads);
        if (*train_cmd) {
            return cmd_train(train_config, train_seed, train_seed_opt->count() > 0, train_out,
                             command_line);
        }
        if (*gen_cmd) {
            GenerateFlags flags = gf;
            if (!gen_config.empty()) {
                json cfg = cli_detail::load_json_file(gen_config);
                SamplerConfig from_file = cli_detail::sampler_from_config(cfg);
                if (gen_steps->count() == 0) flags.sampler.steps = from_file.steps;
                if (gen_guidance->count() == 0) flags.sampler.guidance = from_file.guidance;
                if (gen_eta->count() == 0) flags.sampler.eta = from_file.eta;
                flags.sampler.schedule_T = from_file.schedule_T;
                flags.sampler.beta_start = from_file.beta_start;
                flags.sampler.beta_end = from_file.beta_end;
            }
            return cmd_generate(flags, command_line);
        }
        if (*eval_cmd) {
            return cmd_evaluate(eval_dir, eval_embedder, eval_block, eval_radius);
        }
        if (*abl_cmd) {
            SamplerConfig sampler;
            if (!abl_config.empty()) {
                sampler = cli_detail::sampler_from_config(cli_detail::load_json_file(abl_config));
            }
            if (abl_steps_opt->count() > 0) sampler.steps = abl_steps;
            return cmd_ablate(abl_ckpt, abl_prompt, abl_modes, abl_seeds, abl_out, sampler,
                              command_line);
        }
        fail(ErrorCategory::usage, "no subcommand given");
    } catch (const Error& e) {
        std::fprintf(stderr, "error:%s: %s\n", to_string(e.category()), e.what());
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error:internal: %s\n", e.what());
        return exit_code(ErrorCategory::internal);
    }
    return 0;
}

}  // namespace unictrl

#endif
