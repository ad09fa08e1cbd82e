#ifndef UNICTRL_ATTENTION_HPP
#define UNICTRL_ATTENTION_HPP

#include <cmath>
#include <map>
#include <mutex>
#include <string>

#include "unictrl/autograd.hpp"
#include "unictrl/tensor.hpp"

namespace unictrl {

// ---------------------------------------------------------------------------
// Layout maps for head splitting and frame/token axis swaps, cached per shape.
// ---------------------------------------------------------------------------

namespace layout {

inline IndexMap cached(const std::array<int64_t, 6>& key,
                       const std::function<std::vector<int64_t>()>& build) {
    static std::map<std::array<int64_t, 6>, IndexMap> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lk(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto map = std::make_shared<const std::vector<int64_t>>(build());
    cache.emplace(key, map);
    return map;
}

// [B, T, D] -> [B, H, T, D/H]
inline IndexMap head_split(int64_t B, int64_t T, int64_t D, int64_t H) {
    const int64_t hd = D / H;
    return cached({1, B, T, D, H, 0}, [=] {
        std::vector<int64_t> m(size_t(B * T * D));
        int64_t i = 0;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t t = 0; t < T; ++t)
                    for (int64_t d = 0; d < hd; ++d) m[size_t(i++)] = (b * T + t) * D + h * hd + d;
        return m;
    });
}

// [B, H, T, D/H] -> [B, T, D]
inline IndexMap head_merge(int64_t B, int64_t T, int64_t D, int64_t H) {
    const int64_t hd = D / H;
    return cached({2, B, T, D, H, 0}, [=] {
        std::vector<int64_t> m(size_t(B * T * D));
        int64_t i = 0;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t d = 0; d < hd; ++d)
                        m[size_t(i++)] = ((b * H + h) * T + t) * hd + d;
        return m;
    });
}

// [A, B, D] -> [B, A, D]
inline IndexMap swap_axes01(int64_t A, int64_t B, int64_t D) {
    return cached({3, A, B, D, 0, 0}, [=] {
        std::vector<int64_t> m(size_t(A * B * D));
        int64_t i = 0;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t a = 0; a < A; ++a)
                for (int64_t d = 0; d < D; ++d) m[size_t(i++)] = (a * B + b) * D + d;
        return m;
    });
}

// [F, T, D] -> [1, T, D], frame 0 only
inline IndexMap take_frame0(int64_t T, int64_t D) {
    return cached({4, T, D, 0, 0, 0}, [=] {
        std::vector<int64_t> m(size_t(T * D));
        for (int64_t i = 0; i < T * D; ++i) m[size_t(i)] = i;
        return m;
    });
}

}  // namespace layout

// ---------------------------------------------------------------------------
// Weights and control hooks
// ---------------------------------------------------------------------------

struct AttentionWeights {
    Tensor wq, wk, wv, wo;  // each [model_dim, model_dim]
    int head_count = 1;

    int model_dim() const { return int(wq.dim(0)); }

    void validate() const {
        auto square = [&](const Tensor& t, const char* name) {
            if (t.rank() != 2 || t.dim(0) != t.dim(1) || t.dim(0) != wq.dim(0)) {
                fail_shape(std::string("attention weights: ") + name + " must be [" +
                           std::to_string(wq.dim(0)) + "," + std::to_string(wq.dim(0)) + "]");
            }
        };
        square(wq, "wq");
        square(wk, "wk");
        square(wv, "wv");
        square(wo, "wo");
        if (head_count <= 0 || wq.dim(0) % head_count != 0) {
            fail_shape("attention weights: head_count must divide model_dim");
        }
    }
};

enum class AttentionSiteKind { self_attention, cross_attention };

// Per-site attention control:
//   vanilla        - K, V from each frame's own hidden state
//   sac            - K, V from frame 0's hidden state, reused for every frame
//   sac_value_only - V from frame 0, K per frame (the deliberate K/V mismatch)
// inject_q, when set, replaces the computed Q after it has been reported to
// the capture taps.
enum class AttnControlMode { vanilla, sac, sac_value_only };

struct ControlHook {
    AttentionSiteKind applies_to = AttentionSiteKind::self_attention;
    AttnControlMode mode = AttnControlMode::vanilla;
    const Tensor* inject_q = nullptr;
};

// Observation points for one block invocation. Tensors share storage with the
// live computation, so recording is cheap.
struct BlockTaps {
    Tensor input;        // hidden state the block saw
    Tensor q_computed;   // to_q(input) before any injection
    Tensor q_used;       // what actually entered the attention
    Tensor k_used;       // [1,T,D] when sourced from frame 0, else [F,T,D]
    Tensor v_used;
    bool k_from_frame0 = false;
    bool v_from_frame0 = false;
};

// ---------------------------------------------------------------------------
// Engine-generic block implementations
// ---------------------------------------------------------------------------

template <class E>
struct AttnW {
    typename E::V wq, wk, wv, wo;
    int heads = 1;
};

template <class E>
AttnW<E> lift_attention_weights(E& eng, const AttentionWeights& w) {
    w.validate();
    return AttnW<E>{eng.constant(w.wq), eng.constant(w.wk), eng.constant(w.wv),
                    eng.constant(w.wo), w.head_count};
}

namespace blocks {

// softmax(q . k^T / sqrt(d)) . v over the last two axes, batched; k/v may be
// batch-1 and shared.
template <class E>
typename E::V attention_core(E& eng, typename E::V qh, typename E::V kh, typename E::V vh) {
    const int64_t head_dim = eng.value(qh).shape().back();
    auto scores = eng.scale(eng.matmul_nt(qh, kh), 1.0f / std::sqrt(float(head_dim)));
    auto attn = eng.softmax_last(scores);
    return eng.matmul(attn, vh);
}

template <class E>
typename E::V self_attention(E& eng, const AttnW<E>& w, typename E::V z, const ControlHook& hook,
                             BlockTaps* taps = nullptr) {
    const Shape& zs = eng.value(z).shape();
    if (zs.size() != 3) fail_shape("self_attention: hidden state must be [F,T,D]");
    const int64_t F = zs[0], T = zs[1], D = zs[2];
    const int64_t H = w.heads;
    if (hook.applies_to != AttentionSiteKind::self_attention) {
        fail_shape("self_attention: hook is marked for a different site kind");
    }

    auto q = eng.matmul(z, w.wq);
    if (taps) {
        taps->input = eng.value(z);
        taps->q_computed = eng.value(q);
    }
    if (hook.inject_q) {
        if (hook.inject_q->shape() != eng.value(q).shape()) {
            fail_shape("query injection: cache shape " + shape_str(hook.inject_q->shape()) +
                       " does not match computed query " + shape_str(eng.value(q).shape()));
        }
        q = eng.constant(*hook.inject_q);
    }

    typename E::V kv_src = z;
    if (hook.mode != AttnControlMode::vanilla) {
        kv_src = eng.permute(z, layout::take_frame0(T, D), {1, T, D});
    }
    auto k = eng.matmul(hook.mode == AttnControlMode::sac ? kv_src : z, w.wk);
    auto v = eng.matmul(hook.mode == AttnControlMode::vanilla ? z : kv_src, w.wv);

    const int64_t kF = eng.value(k).shape()[0];
    const int64_t vF = eng.value(v).shape()[0];
    auto qh = eng.permute(q, layout::head_split(F, T, D, H), {F, H, T, D / H});
    auto kh = eng.permute(k, layout::head_split(kF, T, D, H), {kF, H, T, D / H});
    auto vh = eng.permute(v, layout::head_split(vF, T, D, H), {vF, H, T, D / H});

    if (taps) {
        taps->q_used = eng.value(q);
        taps->k_used = eng.value(k);
        taps->v_used = eng.value(v);
        taps->k_from_frame0 = kF == 1 && F > 1;
        taps->v_from_frame0 = vF == 1 && F > 1;
    }

    auto ctx = attention_core(eng, qh, kh, vh);
    auto merged = eng.permute(ctx, layout::head_merge(F, T, D, H), {F, T, D});
    return eng.matmul(merged, w.wo);
}

template <class E>
typename E::V cross_attention(E& eng, const AttnW<E>& w, typename E::V z, typename E::V cond,
                              const ControlHook& hook, BlockTaps* taps = nullptr) {
    const Shape& zs = eng.value(z).shape();
    const Shape& cs = eng.value(cond).shape();
    if (zs.size() != 3) fail_shape("cross_attention: hidden state must be [F,T,D]");
    if (cs.size() != 2 || cs[1] != zs[2]) {
        fail_shape("cross_attention: condition must be [tokens," + std::to_string(zs[2]) + "]");
    }
    if (hook.applies_to != AttentionSiteKind::cross_attention) {
        fail_shape("cross_attention: hook is marked for a different site kind");
    }
    if (hook.mode != AttnControlMode::vanilla) {
        fail_shape("cross_attention: frame-0 key/value modes apply to self-attention only");
    }
    const int64_t F = zs[0], T = zs[1], D = zs[2], Tc = cs[0];
    const int64_t H = w.heads;

    auto q = eng.matmul(z, w.wq);
    if (taps) {
        taps->input = eng.value(z);
        taps->q_computed = eng.value(q);
    }
    if (hook.inject_q) {
        if (hook.inject_q->shape() != eng.value(q).shape()) {
            fail_shape("query injection: cache shape " + shape_str(hook.inject_q->shape()) +
                       " does not match computed query " + shape_str(eng.value(q).shape()));
        }
        q = eng.constant(*hook.inject_q);
    }

    auto cond3 = eng.reshape(cond, {1, Tc, D});
    auto k = eng.matmul(cond3, w.wk);
    auto v = eng.matmul(cond3, w.wv);

    if (taps) {
        taps->q_used = eng.value(q);
        taps->k_used = eng.value(k);
        taps->v_used = eng.value(v);
    }

    auto qh = eng.permute(q, layout::head_split(F, T, D, H), {F, H, T, D / H});
    auto kh = eng.permute(k, layout::head_split(1, Tc, D, H), {1, H, Tc, D / H});
    auto vh = eng.permute(v, layout::head_split(1, Tc, D, H), {1, H, Tc, D / H});

    auto ctx = attention_core(eng, qh, kh, vh);
    auto merged = eng.permute(ctx, layout::head_merge(F, T, D, H), {F, T, D});
    return eng.matmul(merged, w.wo);
}

// Attention along the frame axis, independently per spatial token. Control
// hooks never apply here.
template <class E>
typename E::V temporal_attention(E& eng, const AttnW<E>& w, typename E::V z) {
    const Shape& zs = eng.value(z).shape();
    if (zs.size() != 3) fail_shape("temporal_attention: hidden state must be [F,T,D]");
    const int64_t F = zs[0], T = zs[1], D = zs[2];
    const int64_t H = w.heads;

    auto zt = eng.permute(z, layout::swap_axes01(F, T, D), {T, F, D});
    auto q = eng.matmul(zt, w.wq);
    auto k = eng.matmul(zt, w.wk);
    auto v = eng.matmul(zt, w.wv);

    auto qh = eng.permute(q, layout::head_split(T, F, D, H), {T, H, F, D / H});
    auto kh = eng.permute(k, layout::head_split(T, F, D, H), {T, H, F, D / H});
    auto vh = eng.permute(v, layout::head_split(T, F, D, H), {T, H, F, D / H});

    auto ctx = attention_core(eng, qh, kh, vh);
    auto merged = eng.permute(ctx, layout::head_merge(T, F, D, H), {T, F, D});
    auto out = eng.matmul(merged, w.wo);
    return eng.permute(out, layout::swap_axes01(T, F, D), {F, T, D});
}

}  // namespace blocks

// ---------------------------------------------------------------------------
// Plain-tensor entry points
// ---------------------------------------------------------------------------

// Scaled dot-product attention over the last two axes, batched over leading
// axes. q [*, Tq, d], k [*, Tk, d], v [*, Tk, dv] -> [*, Tq, dv].
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) {
        fail_shape("attention: operands must have rank >= 2");
    }
    if (q.dim(q.rank() - 1) != k.dim(k.rank() - 1)) {
        fail_shape("attention: query/key head dims disagree, " + shape_str(q.shape()) + " vs " +
                   shape_str(k.shape()));
    }
    if (k.dim(k.rank() - 2) != v.dim(v.rank() - 2)) {
        fail_shape("attention: key/value token counts disagree, " + shape_str(k.shape()) +
                   " vs " + shape_str(v.shape()));
    }
    const float inv_sqrt_d = 1.0f / std::sqrt(float(q.dim(q.rank() - 1)));
    Tensor scores = scale(matmul_nt(q, k), inv_sqrt_d);
    return matmul(softmax_last(scores), v);
}

inline Tensor self_attention_block(const Tensor& z, const AttentionWeights& w,
                                   const ControlHook& hook, BlockTaps* taps = nullptr) {
    EvalEngine eng;
    auto wv = lift_attention_weights(eng, w);
    return blocks::self_attention(eng, wv, z, hook, taps);
}

inline Tensor cross_attention_block(const Tensor& z, const Tensor& cond,
                                    const AttentionWeights& w, const ControlHook& hook,
                                    BlockTaps* taps = nullptr) {
    EvalEngine eng;
    auto wv = lift_attention_weights(eng, w);
    return blocks::cross_attention(eng, wv, z, cond, hook, taps);
}

inline Tensor temporal_attention_block(const Tensor& z, const AttentionWeights& w) {
    EvalEngine eng;
    auto wv = lift_attention_weights(eng, w);
    return blocks::temporal_attention(eng, wv, z);
}

}  // namespace unictrl

#endif
