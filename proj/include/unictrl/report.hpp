#ifndef UNICTRL_REPORT_HPP
#define UNICTRL_REPORT_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unictrl/image_io.hpp"
#include "unictrl/metrics.hpp"
#include "unictrl/pipeline.hpp"

namespace unictrl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest serialization. manifest.json round-trips to an identical run: it
// carries every input needed to reproduce the artifacts byte for byte.
// Wall-clock timing goes to run.log instead so the JSON stays deterministic.
// ---------------------------------------------------------------------------

inline json sampler_to_json(const SamplerConfig& s) {
    return json{{"steps", s.steps},           {"eta", s.eta},
                {"guidance", s.guidance},     {"schedule_T", s.schedule_T},
                {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
}

inline SamplerConfig sampler_from_json(const json& j) {
    SamplerConfig s;
    s.steps = j.at("steps").get<int>();
    s.eta = j.at("eta").get<double>();
    s.guidance = j.at("guidance").get<float>();
    s.schedule_T = j.at("schedule_T").get<int>();
    s.beta_start = j.at("beta_start").get<float>();
    s.beta_end = j.at("beta_end").get<float>();
    return s;
}

inline json ctrl_to_json(const UniCtrlConfig& c) {
    return json{{"sac", c.enable_sac},
                {"mi", c.enable_mi},
                {"ss", c.enable_ss},
                {"motion_degree", c.motion_degree},
                {"q_scope",
                 c.q_injection_scope == UniCtrlConfig::QScope::all_attention ? "all" : "cross"},
                {"kv_mode",
                 c.kv_mode == UniCtrlConfig::KvMode::matched ? "matched" : "value-only"},
                {"late_window", c.use_late_window}};
}

inline UniCtrlConfig ctrl_from_json(const json& j) {
    UniCtrlConfig c;
    c.enable_sac = j.at("sac").get<bool>();
    c.enable_mi = j.at("mi").get<bool>();
    c.enable_ss = j.at("ss").get<bool>();
    c.motion_degree = j.at("motion_degree").get<float>();
    c.q_injection_scope = j.at("q_scope").get<std::string>() == "cross"
                              ? UniCtrlConfig::QScope::cross_only
                              : UniCtrlConfig::QScope::all_attention;
    c.kv_mode = j.at("kv_mode").get<std::string>() == "value-only"
                    ? UniCtrlConfig::KvMode::value_only_mismatch
                    : UniCtrlConfig::KvMode::matched;
    c.use_late_window = j.at("late_window").get<bool>();
    return c;
}

inline json model_config_to_json(const DenoiserConfig& c) {
    return json{{"frames", c.frames},
                {"height", c.height},
                {"width", c.width},
                {"channels", c.channels},
                {"patch", c.patch},
                {"model_dim", c.model_dim},
                {"head_count", c.head_count},
                {"block_count", c.block_count},
                {"cond_dim", c.cond_dim},
                {"vocab_size", c.vocab_size},
                {"max_text_tokens", c.max_text_tokens}};
}

inline DenoiserConfig model_config_from_json(const json& j) {
    DenoiserConfig c;
    c.frames = j.at("frames").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.channels = j.at("channels").get<int>();
    c.patch = j.at("patch").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.head_count = j.at("head_count").get<int>();
    c.block_count = j.at("block_count").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_text_tokens = j.at("max_text_tokens").get<int>();
    return c;
}

inline json manifest_to_json(const RunManifest& m) {
    json inj = json::array();
    for (const auto& e : m.injection_log) {
        inj.push_back(json{{"step", e.step}, {"tau", e.tau}, {"injected", e.injected}});
    }
    return json{{"command", m.command},
                {"tool_version", m.tool_version},
                {"prompt", m.prompt},
                {"seed", m.seed},
                {"threads", m.threads},
                {"unictrl", m.unictrl},
                {"sampler", sampler_to_json(m.sampler)},
                {"unictrl_config", ctrl_to_json(m.ctrl)},
                {"model", model_config_to_json(m.model_config)},
                {"checkpoint", m.checkpoint_path},
                {"injection_log", inj},
                {"q_self_divergence", m.q_self_divergence},
                {"artifacts", m.artifact_paths}};
}

inline RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.prompt = j.at("prompt").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.threads = j.at("threads").get<int>();
    m.unictrl = j.at("unictrl").get<bool>();
    m.sampler = sampler_from_json(j.at("sampler"));
    m.ctrl = ctrl_from_json(j.at("unictrl_config"));
    m.model_config = model_config_from_json(j.at("model"));
    m.checkpoint_path = j.at("checkpoint").get<std::string>();
    for (const auto& e : j.at("injection_log")) {
        m.injection_log.push_back({e.at("step").get<int>(), e.at("tau").get<int>(),
                                   e.at("injected").get<bool>()});
    }
    m.q_self_divergence = j.at("q_self_divergence").get<std::vector<double>>();
    m.artifact_paths = j.at("artifacts").get<std::vector<std::string>>();
    return m;
}

inline json metric_report_to_json(const MetricReport& r) {
    return json{{"mode", r.mode},
                {"expectation", r.expectation},
                {"prompt", r.prompt},
                {"seed", r.seed},
                {"consistency", r.consistency},
                {"consistency_consecutive", r.consistency_consecutive},
                {"motion", r.motion},
                {"per_frame_consistency", r.per_frame_consistency},
                {"per_pair_motion", r.per_pair_motion},
                {"embedder", r.embedder},
                {"flow_block", r.flow_block},
                {"flow_radius", r.flow_radius}};
}

// ---------------------------------------------------------------------------
// Artifact emission
// ---------------------------------------------------------------------------

namespace report_detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCategory::io, "cannot open for writing: " + path);
    f << text;
    if (!f) fail(ErrorCategory::io, "write failed: " + path);
}

inline std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.png", i);
    return buf;
}

}  // namespace report_detail

// One PNG per frame, a horizontal frame grid, an animated GIF at roughly
// 8 frames per second, and manifest.json. Returns the updated manifest.
inline RunManifest emit_video(const GeneratedVideo& video, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCategory::io, "cannot create directory: " + dir);

    RunManifest manifest = video.manifest;
    manifest.artifact_paths.clear();
    const VideoFrames& v = video.frames;

    for (int f = 0; f < v.frame_count; ++f) {
        const std::string name = report_detail::frame_name(f);
        write_png(dir + "/" + name, frame_to_image(v, f));
        manifest.artifact_paths.push_back(name);
    }

    VideoFrames grid = VideoFrames::zeros(1, v.height, v.width * v.frame_count);
    for (int f = 0; f < v.frame_count; ++f) {
        for (int y = 0; y < v.height; ++y) {
            for (int x = 0; x < v.width; ++x) {
                for (int c = 0; c < 3; ++c) {
                    grid.at(0, y, f * v.width + x, c) = v.at(f, y, x, c);
                }
            }
        }
    }
    write_png(dir + "/grid.png", frame_to_image(grid, 0));
    manifest.artifact_paths.push_back("grid.png");

    write_gif(dir + "/video.gif", v, 12);
    manifest.artifact_paths.push_back("video.gif");

    report_detail::write_text(dir + "/manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    manifest.artifact_paths.push_back("manifest.json");
    return manifest;
}

// Aggregated metrics document: every run plus per-mode mean and population
// standard deviation across seeds.
inline void emit_report(const std::vector<MetricReport>& reports, const std::string& path) {
    if (reports.empty()) fail(ErrorCategory::data, "emit_report: no reports to aggregate");

    json runs = json::array();
    for (const auto& r : reports) runs.push_back(metric_report_to_json(r));

    std::map<std::string, std::vector<const MetricReport*>> by_mode;
    for (const auto& r : reports) by_mode[r.mode].push_back(&r);

    auto stats = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= double(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= double(xs.size());
        return json{{"mean", mean}, {"std", std::sqrt(var)}};
    };

    json modes = json::object();
    for (const auto& [mode, rs] : by_mode) {
        std::vector<double> cons, consec, motion;
        for (const auto* r : rs) {
            cons.push_back(r->consistency);
            consec.push_back(r->consistency_consecutive);
            motion.push_back(r->motion);
        }
        modes[mode] = json{{"count", rs.size()},
                           {"consistency", stats(cons)},
                           {"consistency_consecutive", stats(consec)},
                           {"motion", stats(motion)},
                           {"expectation", rs.front()->expectation}};
    }

    json doc{{"runs", runs}, {"modes", modes}};
    report_detail::write_text(path, doc.dump(2) + "\n");
}

// Loads the frames of an emitted video directory (frame_000.png ...).
inline VideoFrames load_video_frames(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<Image8> images;
    for (int f = 0;; ++f) {
        const fs::path p = fs::path(dir) / report_detail::frame_name(f);
        if (!fs::exists(p)) break;
        images.push_back(read_png(p.string()));
    }
    if (images.empty()) {
        fail(ErrorCategory::io, "no frame_*.png files under " + dir);
    }
    VideoFrames v = VideoFrames::zeros(int(images.size()), images[0].height, images[0].width);
    for (size_t f = 0; f < images.size(); ++f) {
        if (images[f].width != v.width || images[f].height != v.height) {
            fail(ErrorCategory::data, "frame sizes differ under " + dir);
        }
        for (size_t i = 0; i < images[f].rgb.size(); ++i) {
            v.rgb[f * size_t(v.frame_values()) + i] = float(images[f].rgb[i]) / 255.0f;
        }
    }
    return v;
}

}  // namespace unictrl

#endif
