#ifndef UNICTRL_PIPELINE_HPP
#define UNICTRL_PIPELINE_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "unictrl/denoiser.hpp"
#include "unictrl/diffusion.hpp"
#include "unictrl/metrics.hpp"
#include "unictrl/sprites.hpp"
#include "unictrl/tensor.hpp"
#include "unictrl/version.hpp"
#include "unictrl/video.hpp"

namespace unictrl {

// ---------------------------------------------------------------------------
// Control configuration
// ---------------------------------------------------------------------------

struct UniCtrlConfig {
    bool enable_sac = true;
    bool enable_mi = true;
    bool enable_ss = true;
    float motion_degree = 1.0f;  // c in [0,1]: how deep into the trajectory queries are injected

    enum class QScope { all_attention, cross_only };
    QScope q_injection_scope = QScope::all_attention;

    enum class KvMode { matched, value_only_mismatch };
    KvMode kv_mode = KvMode::matched;

    // Debug alternative reading of the injection window: inject on the late
    // (low-noise) steps instead of the early ones.
    bool use_late_window = false;

    void validate() const {
        if (!(motion_degree >= 0.0f && motion_degree <= 1.0f)) {
            fail_config("unictrl: motion injection degree must lie in [0,1]");
        }
        if (kv_mode == KvMode::value_only_mismatch && !enable_sac) {
            fail_config("unictrl: the key/value mismatch mode requires SAC to be enabled");
        }
    }
};

// Query injection is active on the early, high-noise steps:
// tau >= (1 - c) * T. c = 1 injects everywhere, c = 0 only at tau = T itself.
inline bool motion_injection_active(int tau, double c, int total_steps) {
    if (c < 0.0 || c > 1.0) fail_config("motion_injection_active: c must lie in [0,1]");
    if (tau < 0 || tau > total_steps) {
        fail(ErrorCategory::data, "motion_injection_active: tau out of range");
    }
    return double(tau) >= (1.0 - c) * double(total_steps);
}

inline bool motion_injection_active_late(int tau, double c, int total_steps) {
    return double(tau) <= (1.0 - c) * double(total_steps);
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct InjectionLogEntry {
    int step = 0;
    int tau = 0;
    bool injected = false;
};

struct RunManifest {
    std::string command;
    std::string tool_version = kToolVersion;
    std::string prompt;
    uint64_t seed = 0;
    int threads = 1;
    bool unictrl = false;
    SamplerConfig sampler;
    UniCtrlConfig ctrl;
    DenoiserConfig model_config;
    std::string checkpoint_path;
    std::vector<InjectionLogEntry> injection_log;  // one entry per sampling step
    // Max |Q_motion - Q_output| over the self-attention sites of both guidance
    // passes, per step; measures how far the two branches' self-attention
    // queries actually drift.
    std::vector<double> q_self_divergence;
    std::vector<std::string> artifact_paths;
};

struct GeneratedVideo {
    VideoFrames frames;
    std::vector<Tensor> trajectory;  // z after each step, when requested
    RunManifest manifest;
};

// Test/diagnostic visibility into the sampling loop. Pointers are valid only
// during the callback.
struct StepObservation {
    int step = 0;
    int tau = 0;
    bool injected = false;
    const Tensor* z_out = nullptr;     // output-branch latent at the top of the step
    const Tensor* z_motion = nullptr;  // motion-branch latent after synchronization (unictrl only)
};

struct SampleOptions {
    bool unictrl = false;
    UniCtrlConfig ctrl;
    bool keep_trajectory = false;
    std::function<void(const StepObservation&)> observer;
};

// ---------------------------------------------------------------------------
// Hook assembly
// ---------------------------------------------------------------------------

// Hooks for the output branch. inject_src, when non-null, supplies the motion
// branch's captured queries for this guidance pass.
inline std::vector<ControlHook> unictrl_hooks(const DenoiserConfig& cfg,
                                              const UniCtrlConfig& ctrl,
                                              const CapturedQueries* inject_src) {
    if (inject_src && int(inject_src->entries.size()) != cfg.hooked_site_count()) {
        fail_shape("unictrl_hooks: query cache has " +
                   std::to_string(inject_src->entries.size()) + " entries, expected " +
                   std::to_string(cfg.hooked_site_count()));
    }
    std::vector<ControlHook> hooks;
    hooks.reserve(size_t(cfg.hooked_site_count()));
    const AttnControlMode self_mode =
        !ctrl.enable_sac ? AttnControlMode::vanilla
        : (ctrl.kv_mode == UniCtrlConfig::KvMode::value_only_mismatch
               ? AttnControlMode::sac_value_only
               : AttnControlMode::sac);
    for (int b = 0; b < cfg.block_count; ++b) {
        const Tensor* self_q = nullptr;
        const Tensor* cross_q = nullptr;
        if (inject_src) {
            if (ctrl.q_injection_scope == UniCtrlConfig::QScope::all_attention) {
                self_q = &inject_src->entries[size_t(2 * b)].q;
            }
            cross_q = &inject_src->entries[size_t(2 * b + 1)].q;
        }
        hooks.push_back({AttentionSiteKind::self_attention, self_mode, self_q});
        hooks.push_back({AttentionSiteKind::cross_attention, AttnControlMode::vanilla, cross_q});
    }
    return hooks;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace pipeline_detail {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    const float* pa = a.data();
    const float* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(double(pa[i]) - double(pb[i])));
    }
    return m;
}

inline double self_query_divergence(const DenoiserConfig& cfg, const CapturedQueries& motion,
                                    const CapturedQueries& output) {
    double div = 0.0;
    for (int b = 0; b < cfg.block_count; ++b) {
        const size_t i = size_t(2 * b);
        div = std::max(div, max_abs_diff(motion.entries[i].q, output.entries[i].q));
    }
    return div;
}

}  // namespace pipeline_detail

inline GeneratedVideo run_sampler(const DenoiserModel& model, const std::string& prompt,
                                  uint64_t seed, const SamplerConfig& sampler,
                                  const SampleOptions& opts) {
    const DenoiserConfig& cfg = model.config;
    cfg.validate();
    sampler.validate();
    if (opts.unictrl) opts.ctrl.validate();

    const NoiseSchedule sched =
        make_schedule(sampler.schedule_T, sampler.beta_start, sampler.beta_end);
    const std::vector<int> taus = sampler.timesteps();
    const TextCondition cond = model.embed_text(prompt);
    const TextCondition uncond = model.null_condition();
    const std::vector<ControlHook> hooks_v = vanilla_hooks(cfg);
    const Shape latent_shape{cfg.frames, cfg.channels, cfg.height, cfg.width};

    RngStream init_stream = derive_stream(seed, rng_domains::init_latent);
    RngStream noise_stream = derive_stream(seed, rng_domains::step_noise);
    Tensor z_out = gaussian(latent_shape, init_stream);
    Tensor z_motion = z_out;

    GeneratedVideo out;
    out.manifest.prompt = prompt;
    out.manifest.seed = seed;
    out.manifest.threads = thread_count();
    out.manifest.unictrl = opts.unictrl;
    out.manifest.sampler = sampler;
    out.manifest.ctrl = opts.ctrl;
    out.manifest.model_config = cfg;

    const int N = sampler.steps;
    for (int n = 0; n < N; ++n) {
        const int t = taus[size_t(n)];
        const int t_prev = taus[size_t(n) + 1];

        if (opts.unictrl && opts.ctrl.enable_ss) z_motion = z_out;

        const bool inject_now =
            opts.unictrl && opts.ctrl.enable_mi &&
            (opts.ctrl.use_late_window
                 ? motion_injection_active_late(t, opts.ctrl.motion_degree, sampler.schedule_T)
                 : motion_injection_active(t, opts.ctrl.motion_degree, sampler.schedule_T));

        if (opts.observer) {
            StepObservation obs;
            obs.step = n;
            obs.tau = t;
            obs.injected = inject_now;
            obs.z_out = &z_out;
            obs.z_motion = opts.unictrl ? &z_motion : nullptr;
            opts.observer(obs);
        }

        // One shared stochastic draw per step; both branches consume the same
        // noise so eta > 0 runs stay branch-comparable.
        Tensor step_noise;
        const Tensor* noise_ptr = nullptr;
        if (sampler.eta > 0.0 && sched.sigma(t, t_prev, sampler.eta) > 0.0) {
            step_noise = gaussian(latent_shape, noise_stream);
            noise_ptr = &step_noise;
        }

        if (!opts.unictrl) {
            Tensor eps_c = denoise(model, z_out, cond, t, hooks_v).eps_hat;
            Tensor eps_u = denoise(model, z_out, uncond, t, hooks_v).eps_hat;
            Tensor eps = cfg_combine(eps_c, eps_u, sampler.guidance);
            z_out = ddim_step(z_out, eps, t, t_prev, sched, sampler.eta, noise_ptr);
            out.manifest.injection_log.push_back({n, t, false});
        } else {
            DenoiseResult mc = denoise(model, z_motion, cond, t, hooks_v, true);
            DenoiseResult mu = denoise(model, z_motion, uncond, t, hooks_v, true);

            const std::vector<ControlHook> hooks_c =
                unictrl_hooks(cfg, opts.ctrl, inject_now ? &mc.captured : nullptr);
            const std::vector<ControlHook> hooks_u =
                unictrl_hooks(cfg, opts.ctrl, inject_now ? &mu.captured : nullptr);
            DenoiseResult oc = denoise(model, z_out, cond, t, hooks_c, true);
            DenoiseResult ou = denoise(model, z_out, uncond, t, hooks_u, true);

            out.manifest.q_self_divergence.push_back(
                std::max(pipeline_detail::self_query_divergence(cfg, mc.captured, oc.captured),
                         pipeline_detail::self_query_divergence(cfg, mu.captured, ou.captured)));

            Tensor eps_out = cfg_combine(oc.eps_hat, ou.eps_hat, sampler.guidance);
            Tensor z_next = ddim_step(z_out, eps_out, t, t_prev, sched, sampler.eta, noise_ptr);
            if (!opts.ctrl.enable_ss) {
                // Without synchronization the motion branch advances on its
                // own prediction; with it, the latent would be overwritten at
                // the top of the next step anyway.
                Tensor eps_m = cfg_combine(mc.eps_hat, mu.eps_hat, sampler.guidance);
                z_motion = ddim_step(z_motion, eps_m, t, t_prev, sched, sampler.eta, noise_ptr);
            }
            z_out = z_next;
            out.manifest.injection_log.push_back({n, t, inject_now});
        }
        if (opts.keep_trajectory) out.trajectory.push_back(z_out);
    }

    out.frames = decode_latent(z_out);
    return out;
}

// CFG-guided DDIM sampling with no attention control.
inline GeneratedVideo sample_baseline(const DenoiserModel& model, const std::string& prompt,
                                      uint64_t seed, const SamplerConfig& sampler) {
    SampleOptions opts;
    opts.unictrl = false;
    return run_sampler(model, prompt, seed, sampler, opts);
}

// Two-branch sampling: an uncontrolled motion branch supplies queries, the
// output branch runs frame-0 key/value control plus query injection, and the
// branches are re-synchronized at the top of each step.
inline GeneratedVideo sample_unictrl(const DenoiserModel& model, const std::string& prompt,
                                     uint64_t seed, const SamplerConfig& sampler,
                                     const UniCtrlConfig& ctrl) {
    SampleOptions opts;
    opts.unictrl = true;
    opts.ctrl = ctrl;
    return run_sampler(model, prompt, seed, sampler, opts);
}

// ---------------------------------------------------------------------------
// Ablation runner
// ---------------------------------------------------------------------------

struct AblationEntry {
    std::string mode;
    GeneratedVideo video;
    MetricReport report;
};

namespace pipeline_detail {

struct ModeSetup {
    bool unictrl = true;
    UniCtrlConfig ctrl;
    std::string expectation;
};

inline ModeSetup ablation_mode_setup(const std::string& mode) {
    ModeSetup s;
    auto ctrl = [](bool sac, bool mi, bool ss, float c) {
        UniCtrlConfig u;
        u.enable_sac = sac;
        u.enable_mi = mi;
        u.enable_ss = ss;
        u.motion_degree = c;
        return u;
    };
    if (mode == "baseline") {
        s.unictrl = false;
        s.expectation = "reference sampler output";
    } else if (mode == "full") {
        s.ctrl = ctrl(true, true, true, 1.0f);
        s.expectation = "consistency above baseline with motion preserved";
    } else if (mode == "no-sac") {
        s.ctrl = ctrl(false, true, true, 1.0f);
        s.expectation = "identical to baseline";
    } else if (mode == "no-mi") {
        s.ctrl = ctrl(true, false, true, 1.0f);
        s.expectation = "max consistency, min motion";
    } else if (mode == "no-ss") {
        s.ctrl = ctrl(true, true, false, 1.0f);
        s.expectation = "motion preserved, consistency below full";
    } else if (mode == "only-sac") {
        s.ctrl = ctrl(true, false, false, 1.0f);
        s.expectation = "max consistency, min motion";
    } else if (mode == "only-mi") {
        s.ctrl = ctrl(false, true, false, 1.0f);
        s.expectation = "identical to baseline";
    } else if (mode == "only-ss") {
        s.ctrl = ctrl(false, false, true, 1.0f);
        s.expectation = "identical to baseline";
    } else if (mode == "kv-mismatch") {
        s.ctrl = ctrl(true, true, true, 1.0f);
        s.ctrl.kv_mode = UniCtrlConfig::KvMode::value_only_mismatch;
        s.expectation = "consistency degraded versus matched key/value";
    } else {
        fail(ErrorCategory::usage, "ablation: unknown mode '" + mode + "'");
    }
    return s;
}

}  // namespace pipeline_detail

// Runs one ablation mode (or a c-sweep, written "c-sweep:0:0.5:1") and scores
// each video with the default metrics.
inline std::vector<AblationEntry> ablation_run(const DenoiserModel& model,
                                               const std::string& prompt, uint64_t seed,
                                               const SamplerConfig& sampler,
                                               const std::string& mode) {
    std::vector<AblationEntry> out;
    auto score = [&](const std::string& name, GeneratedVideo video,
                     const std::string& expectation) {
        MetricReport r = evaluate_video(video.frames, FrameEmbedder::pixel(), 4, 4);
        r.mode = name;
        r.expectation = expectation;
        r.prompt = prompt;
        r.seed = seed;
        out.push_back({name, std::move(video), std::move(r)});
    };

    if (mode.rfind("c-sweep:", 0) == 0) {
        std::string rest = mode.substr(8);
        if (rest.empty()) fail(ErrorCategory::usage, "ablation: empty c-sweep list");
        size_t pos = 0;
        while (pos <= rest.size()) {
            size_t next = rest.find(':', pos);
            std::string tok = rest.substr(pos, next == std::string::npos ? next : next - pos);
            if (tok.empty()) fail(ErrorCategory::usage, "ablation: empty c-sweep value");
            float c = 0.0f;
            try {
                c = std::stof(tok);
            } catch (const std::exception&) {
                fail(ErrorCategory::usage, "ablation: bad c-sweep value '" + tok + "'");
            }
            UniCtrlConfig ctrl;
            ctrl.motion_degree = c;
            score("c=" + tok, sample_unictrl(model, prompt, seed, sampler, ctrl),
                  "consistency falls and motion rises with c");
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        return out;
    }

    auto setup = pipeline_detail::ablation_mode_setup(mode);
    GeneratedVideo video = setup.unictrl
                               ? sample_unictrl(model, prompt, seed, sampler, setup.ctrl)
                               : sample_baseline(model, prompt, seed, sampler);
    score(mode, std::move(video), setup.expectation);
    return out;
}

}  // namespace unictrl

#endif
