#ifndef UNICTRL_DENOISER_HPP
#define UNICTRL_DENOISER_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unictrl/attention.hpp"
#include "unictrl/autograd.hpp"
#include "unictrl/rng.hpp"
#include "unictrl/tensor.hpp"

namespace unictrl {

namespace rng_domains {
constexpr uint64_t weights = 1;
constexpr uint64_t init_latent = 2;
constexpr uint64_t step_noise = 3;
constexpr uint64_t train_data = 4;
constexpr uint64_t train_step = 5;
}  // namespace rng_domains

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int frames = 8;
    int height = 16;
    int width = 16;
    int channels = 4;
    int patch = 2;
    int model_dim = 64;
    int head_count = 4;
    int block_count = 4;
    int cond_dim = 64;
    int vocab_size = 256;
    int max_text_tokens = 8;

    int tokens_per_frame() const { return (height / patch) * (width / patch); }
    int patch_features() const { return channels * patch * patch; }
    int hooked_site_count() const { return 2 * block_count; }
    int ffn_dim() const { return 4 * model_dim; }

    void validate() const {
        if (frames < 1 || height < 1 || width < 1 || channels < 1) {
            fail_config("denoiser: extents must be positive");
        }
        if (patch < 1 || height % patch != 0 || width % patch != 0) {
            fail_config("denoiser: patch size must divide height and width");
        }
        if (model_dim < 1 || head_count < 1 || model_dim % head_count != 0) {
            fail_config("denoiser: head_count must divide model_dim");
        }
        if (model_dim % 2 != 0) fail_config("denoiser: model_dim must be even");
        if (block_count < 1) fail_config("denoiser: block_count must be >= 1");
        if (cond_dim != model_dim) {
            fail_config("denoiser: cond_dim must equal model_dim (text tokens live in model space)");
        }
        if (vocab_size < 1 || max_text_tokens < 1) {
            fail_config("denoiser: vocabulary and token budget must be positive");
        }
    }

    bool operator==(const DenoiserConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Timestep and position encodings
// ---------------------------------------------------------------------------

// Standard sin/cos encoding of a scalar position.
inline void fill_sinusoid(float* out, double pos, int dim, double max_period = 10000.0) {
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(max_period) * double(i) / double(half));
        out[i] = float(std::sin(pos * w));
        out[half + i] = float(std::cos(pos * w));
    }
}

// Sinusoidal encoding of timestep t at width `dim`; defined for 0 <= t <= T.
inline Tensor embed_timestep(int t, int total_steps, int dim) {
    if (t < 0 || t > total_steps) {
        fail(ErrorCategory::data,
             "embed_timestep: t=" + std::to_string(t) + " outside [0," +
                 std::to_string(total_steps) + "]");
    }
    if (dim < 2 || dim % 2 != 0) fail_shape("embed_timestep: dim must be even and >= 2");
    Tensor out({int64_t(dim)});
    fill_sinusoid(out.mutable_data(), double(t), dim);
    return out;
}

// ---------------------------------------------------------------------------
// Text conditioning
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Whitespace tokens, each hashed into a vocabulary bucket.
inline std::vector<int64_t> tokenize_prompt(const std::string& prompt, int vocab_size,
                                            int max_tokens) {
    std::vector<int64_t> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty() && int(ids.size()) < max_tokens) {
            ids.push_back(int64_t(fnv1a64(word) % uint64_t(vocab_size)));
        }
        word.clear();
    };
    for (char c : prompt) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            flush();
        } else {
            word.push_back(c);
        }
    }
    flush();
    return ids;
}

struct TextCondition {
    std::string prompt;
    std::vector<int64_t> token_ids;  // empty for the null condition
    Tensor embedding;                // [tokens, cond_dim]; all-zero [1, cond_dim] when null
    bool is_null = false;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct DenoiserModel {
    DenoiserConfig config;
    std::vector<std::string> param_names;
    std::vector<Tensor> params;

    struct AttnIds {
        int wq = -1, wk = -1, wv = -1, wo = -1;
    };
    struct BlockIds {
        int norm_self = -1, norm_cross = -1, norm_temp = -1, norm_ffn = -1;
        AttnIds self_attn, cross_attn, temp_attn;
        int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
    };
    int patch_w = -1, patch_b = -1;
    int time_w1 = -1, time_b1 = -1, time_w2 = -1, time_b2 = -1;
    int text_table = -1;
    int final_norm = -1, head_w = -1, head_b = -1;
    std::vector<BlockIds> block_ids;

    const Tensor& p(int id) const { return params[size_t(id)]; }

    static DenoiserModel random_init(const DenoiserConfig& cfg, uint64_t seed) {
        cfg.validate();
        DenoiserModel m;
        m.config = cfg;
        RngStream stream = derive_stream(seed, rng_domains::weights);
        const float d_in = float(cfg.model_dim);
        const float residual_scale = 1.0f / std::sqrt(2.0f * float(cfg.block_count));

        auto reg = [&](const std::string& name, Tensor t) {
            m.param_names.push_back(name);
            m.params.push_back(std::move(t));
            return int(m.params.size()) - 1;
        };
        auto randn = [&](Shape shape, float std) {
            return scale(gaussian(std::move(shape), stream), std);
        };
        auto ones = [&](int64_t n) { return Tensor::full({n}, 1.0f); };

        const int64_t D = cfg.model_dim;
        const int64_t pf = cfg.patch_features();
        m.patch_w = reg("patch_embed.weight", randn({pf, D}, 1.0f / std::sqrt(float(pf))));
        m.patch_b = reg("patch_embed.bias", Tensor({D}));
        m.time_w1 = reg("time_mlp.w1", randn({D, D}, 1.0f / std::sqrt(d_in)));
        m.time_b1 = reg("time_mlp.b1", Tensor({D}));
        m.time_w2 = reg("time_mlp.w2", randn({D, D}, 1.0f / std::sqrt(d_in)));
        m.time_b2 = reg("time_mlp.b2", Tensor({D}));
        m.text_table = reg("text_embed.table",
                           randn({int64_t(cfg.vocab_size), D}, 1.0f));

        for (int b = 0; b < cfg.block_count; ++b) {
            BlockIds ids;
            const std::string prefix = "block" + std::to_string(b) + ".";
            auto attn = [&](const std::string& kind, bool residual_out) {
                AttnIds a;
                const float wo_std = (1.0f / std::sqrt(d_in)) * (residual_out ? residual_scale : 1.0f);
                a.wq = reg(prefix + kind + ".wq", randn({D, D}, 1.0f / std::sqrt(d_in)));
                a.wk = reg(prefix + kind + ".wk", randn({D, D}, 1.0f / std::sqrt(d_in)));
                a.wv = reg(prefix + kind + ".wv", randn({D, D}, 1.0f / std::sqrt(d_in)));
                a.wo = reg(prefix + kind + ".wo", randn({D, D}, wo_std));
                return a;
            };
            ids.norm_self = reg(prefix + "norm_self.gain", ones(D));
            ids.self_attn = attn("self_attn", true);
            ids.norm_cross = reg(prefix + "norm_cross.gain", ones(D));
            ids.cross_attn = attn("cross_attn", true);
            ids.norm_temp = reg(prefix + "norm_temp.gain", ones(D));
            ids.temp_attn = attn("temp_attn", true);
            ids.norm_ffn = reg(prefix + "norm_ffn.gain", ones(D));
            const int64_t Dff = cfg.ffn_dim();
            ids.ffn_w1 = reg(prefix + "ffn.w1", randn({D, Dff}, 1.0f / std::sqrt(d_in)));
            ids.ffn_b1 = reg(prefix + "ffn.b1", Tensor({Dff}));
            ids.ffn_w2 = reg(prefix + "ffn.w2",
                             randn({Dff, D}, residual_scale / std::sqrt(float(Dff))));
            ids.ffn_b2 = reg(prefix + "ffn.b2", Tensor({D}));
            m.block_ids.push_back(ids);
        }
        m.final_norm = reg("head.norm.gain", ones(D));
        m.head_w = reg("head.weight", randn({D, pf}, 1.0f / std::sqrt(d_in)));
        m.head_b = reg("head.bias", Tensor({pf}));
        return m;
    }

    TextCondition embed_text(const std::string& prompt) const {
        TextCondition c;
        c.prompt = prompt;
        c.token_ids = tokenize_prompt(prompt, config.vocab_size, config.max_text_tokens);
        if (c.token_ids.empty()) {
            c.is_null = true;
            c.embedding = Tensor({1, int64_t(config.cond_dim)});
            return c;
        }
        Tensor rows = gather_rows(p(text_table), c.token_ids);
        c.embedding = add(rows, text_positions(int(c.token_ids.size())));
        return c;
    }

    TextCondition null_condition() const { return embed_text(""); }

    // Fixed positional table for text tokens 0..n-1.
    Tensor text_positions(int n) const {
        Tensor pe({int64_t(n), int64_t(config.model_dim)});
        for (int i = 0; i < n; ++i) {
            fill_sinusoid(pe.mutable_data() + int64_t(i) * config.model_dim, double(i),
                          config.model_dim);
        }
        return pe;
    }

    // Fixed additive position encoding of the spatial token index, shared by
    // every frame. The trunk stays frame-agnostic; frame order enters only
    // through the temporal-attention branch, so spatial layers cannot tell
    // frames apart on their own.
    Tensor grid_positions() const {
        const int64_t F = config.frames, T = config.tokens_per_frame(), D = config.model_dim;
        Tensor pe({F, T, D});
        std::vector<float> sp(static_cast<size_t>(D));
        for (int64_t t = 0; t < T; ++t) {
            fill_sinusoid(sp.data(), double(t), int(D));
            for (int64_t f = 0; f < F; ++f) {
                float* row = pe.mutable_data() + (f * T + t) * D;
                for (int64_t i = 0; i < D; ++i) row[i] = sp[size_t(i)];
            }
        }
        return pe;
    }

    // Frame-index encoding added to the temporal-attention branch input.
    Tensor frame_positions() const {
        const int64_t F = config.frames, T = config.tokens_per_frame(), D = config.model_dim;
        Tensor pe({F, T, D});
        std::vector<float> fr(static_cast<size_t>(D));
        for (int64_t f = 0; f < F; ++f) {
            fill_sinusoid(fr.data(), double(f), int(D));
            for (int64_t t = 0; t < T; ++t) {
                float* row = pe.mutable_data() + (f * T + t) * D;
                for (int64_t i = 0; i < D; ++i) row[i] = fr[size_t(i)];
            }
        }
        return pe;
    }
};

// ---------------------------------------------------------------------------
// Capture structures
// ---------------------------------------------------------------------------

struct CapturedQuery {
    int block = 0;
    AttentionSiteKind kind = AttentionSiteKind::self_attention;
    Tensor q;  // as computed from the hidden state, before any injection
};

// Queries recorded at every hooked site of one denoiser call, in execution
// order (per block: self-attention, then cross-attention).
struct CapturedQueries {
    std::vector<CapturedQuery> entries;
};

// Full observation of every hooked site, for conformance checks.
struct DenoiserTaps {
    struct Site {
        int block = 0;
        AttentionSiteKind kind = AttentionSiteKind::self_attention;
        BlockTaps taps;
    };
    std::vector<Site> sites;
};

inline std::vector<ControlHook> vanilla_hooks(const DenoiserConfig& cfg) {
    std::vector<ControlHook> hooks;
    for (int b = 0; b < cfg.block_count; ++b) {
        hooks.push_back({AttentionSiteKind::self_attention, AttnControlMode::vanilla, nullptr});
        hooks.push_back({AttentionSiteKind::cross_attention, AttnControlMode::vanilla, nullptr});
    }
    return hooks;
}

// ---------------------------------------------------------------------------
// Forward pass, generic over the evaluation engine
// ---------------------------------------------------------------------------

namespace denoiser_detail {

// [F, C, H, W] -> [F, tokens, patch_features], token-major with (c, py, px)
// features per patch.
inline IndexMap patchify_map(const DenoiserConfig& cfg) {
    const int64_t F = cfg.frames, C = cfg.channels, H = cfg.height, W = cfg.width, P = cfg.patch;
    return layout::cached({6, F, C, H, W, P}, [=] {
        const int64_t hp = H / P, wp = W / P;
        std::vector<int64_t> m(size_t(F * C * H * W));
        int64_t i = 0;
        for (int64_t f = 0; f < F; ++f)
            for (int64_t ty = 0; ty < hp; ++ty)
                for (int64_t tx = 0; tx < wp; ++tx)
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t py = 0; py < P; ++py)
                            for (int64_t px = 0; px < P; ++px)
                                m[size_t(i++)] =
                                    ((f * C + c) * H + ty * P + py) * W + tx * P + px;
        return m;
    });
}

inline IndexMap unpatchify_map(const DenoiserConfig& cfg) {
    const int64_t F = cfg.frames, C = cfg.channels, H = cfg.height, W = cfg.width, P = cfg.patch;
    return layout::cached({7, F, C, H, W, P}, [=] {
        const int64_t hp = H / P, wp = W / P;
        const int64_t pf = C * P * P;
        std::vector<int64_t> m(size_t(F * C * H * W));
        int64_t i = 0;
        for (int64_t f = 0; f < F; ++f)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x) {
                        const int64_t ty = y / P, py = y % P;
                        const int64_t tx = x / P, px = x % P;
                        const int64_t token = ty * wp + tx;
                        m[size_t(i++)] = (f * (hp * wp) + token) * pf + (c * P + py) * P + px;
                    }
        return m;
    });
}

}  // namespace denoiser_detail

template <class E>
typename E::V denoiser_forward(E& eng, const DenoiserModel& m,
                               const std::vector<typename E::V>& pv, typename E::V z,
                               const TextCondition& cond, int t,
                               std::span<const ControlHook> hooks, CapturedQueries* capture,
                               DenoiserTaps* taps) {
    const DenoiserConfig& cfg = m.config;
    using V = typename E::V;
    const int64_t F = cfg.frames, T = cfg.tokens_per_frame(), D = cfg.model_dim;
    const int64_t pf = cfg.patch_features();

    const Shape expected{F, cfg.channels, cfg.height, cfg.width};
    if (eng.value(z).shape() != expected) {
        fail_shape("denoise: latent shape " + shape_str(eng.value(z).shape()) +
                   " does not match config " + shape_str(expected));
    }
    if (int(hooks.size()) != cfg.hooked_site_count()) {
        fail_shape("denoise: expected " + std::to_string(cfg.hooked_site_count()) +
                   " control hooks, got " + std::to_string(hooks.size()));
    }

    // Patch embedding plus fixed grid positions and the timestep vector.
    V tokens = eng.permute(z, denoiser_detail::patchify_map(cfg), {F, T, pf});
    V x = eng.add_bias(eng.matmul(tokens, pv[size_t(m.patch_w)]), pv[size_t(m.patch_b)]);
    x = eng.add(x, eng.constant(m.grid_positions()));

    if (t < 0) fail(ErrorCategory::data, "denoise: negative timestep");
    Tensor tvec({1, D});
    fill_sinusoid(tvec.mutable_data(), double(t), int(D));
    V temb_in = eng.constant(tvec);
    V th = eng.silu(eng.add_bias(eng.matmul(temb_in, pv[size_t(m.time_w1)]),
                                 pv[size_t(m.time_b1)]));
    V temb = eng.add_bias(eng.matmul(th, pv[size_t(m.time_w2)]), pv[size_t(m.time_b2)]);
    x = eng.add_bias(x, eng.reshape(temb, {D}));

    // Condition tokens; the null condition is a fixed all-zero sequence.
    V cond_v;
    if (cond.is_null) {
        cond_v = eng.constant(Tensor({1, D}));
    } else {
        cond_v = eng.add(eng.gather_rows(pv[size_t(m.text_table)], cond.token_ids),
                         eng.constant(m.text_positions(int(cond.token_ids.size()))));
    }

    V frame_pe = eng.constant(m.frame_positions());

    for (int b = 0; b < cfg.block_count; ++b) {
        const auto& ids = m.block_ids[size_t(b)];
        auto attn_w = [&](const DenoiserModel::AttnIds& a) {
            return AttnW<E>{pv[size_t(a.wq)], pv[size_t(a.wk)], pv[size_t(a.wv)],
                            pv[size_t(a.wo)], cfg.head_count};
        };
        const ControlHook& self_hook = hooks[size_t(2 * b)];
        const ControlHook& cross_hook = hooks[size_t(2 * b + 1)];

        BlockTaps self_taps;
        BlockTaps* self_taps_p = (capture || taps) ? &self_taps : nullptr;
        {
            auto w = attn_w(ids.self_attn);
            V h = eng.rmsnorm(x, pv[size_t(ids.norm_self)]);
            V out = blocks::self_attention(eng, w, h, self_hook, self_taps_p);
            x = eng.add(x, out);
        }
        if (capture) {
            capture->entries.push_back({b, AttentionSiteKind::self_attention,
                                        self_taps.q_computed});
        }
        if (taps) taps->sites.push_back({b, AttentionSiteKind::self_attention, self_taps});

        BlockTaps cross_taps;
        BlockTaps* cross_taps_p = (capture || taps) ? &cross_taps : nullptr;
        {
            auto w = attn_w(ids.cross_attn);
            V h = eng.rmsnorm(x, pv[size_t(ids.norm_cross)]);
            V out = blocks::cross_attention(eng, w, h, cond_v, cross_hook, cross_taps_p);
            x = eng.add(x, out);
        }
        if (capture) {
            capture->entries.push_back({b, AttentionSiteKind::cross_attention,
                                        cross_taps.q_computed});
        }
        if (taps) taps->sites.push_back({b, AttentionSiteKind::cross_attention, cross_taps});

        {
            auto w = attn_w(ids.temp_attn);
            V h = eng.rmsnorm(x, pv[size_t(ids.norm_temp)]);
            h = eng.add(h, frame_pe);
            x = eng.add(x, blocks::temporal_attention(eng, w, h));
        }
        {
            V h = eng.rmsnorm(x, pv[size_t(ids.norm_ffn)]);
            V f1 = eng.silu(eng.add_bias(eng.matmul(h, pv[size_t(ids.ffn_w1)]),
                                         pv[size_t(ids.ffn_b1)]));
            V f2 = eng.add_bias(eng.matmul(f1, pv[size_t(ids.ffn_w2)]),
                                pv[size_t(ids.ffn_b2)]);
            x = eng.add(x, f2);
        }
    }

    V y = eng.rmsnorm(x, pv[size_t(m.final_norm)]);
    V out_tokens = eng.add_bias(eng.matmul(y, pv[size_t(m.head_w)]), pv[size_t(m.head_b)]);
    return eng.permute(out_tokens, denoiser_detail::unpatchify_map(cfg),
                       {F, cfg.channels, cfg.height, cfg.width});
}

template <class E>
std::vector<typename E::V> lift_params(E& eng, const DenoiserModel& m) {
    std::vector<typename E::V> pv;
    pv.reserve(m.params.size());
    for (const Tensor& t : m.params) pv.push_back(eng.constant(t));
    return pv;
}

inline std::vector<GradTape::Var> lift_params_trainable(GradTape& tape, const DenoiserModel& m) {
    std::vector<GradTape::Var> pv;
    pv.reserve(m.params.size());
    for (const Tensor& t : m.params) pv.push_back(tape.parameter(t));
    return pv;
}

// ---------------------------------------------------------------------------
// Public inference entry point
// ---------------------------------------------------------------------------

struct DenoiseResult {
    Tensor eps_hat;
    CapturedQueries captured;
};

// Noise prediction for one latent at one timestep, with per-site attention
// control. Deterministic given inputs and weights.
inline DenoiseResult denoise(const DenoiserModel& m, const Tensor& z_t, const TextCondition& cond,
                             int t, std::span<const ControlHook> hooks,
                             bool capture_queries = false, DenoiserTaps* taps = nullptr) {
    EvalEngine eng;
    auto pv = lift_params(eng, m);
    DenoiseResult r;
    CapturedQueries* cap = capture_queries ? &r.captured : nullptr;
    r.eps_hat = denoiser_forward(eng, m, pv, z_t, cond, t, hooks, cap, taps);
    check_finite(r.eps_hat, "denoise");
    return r;
}

}  // namespace unictrl

#endif
