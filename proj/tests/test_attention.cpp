#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "unictrl/attention.hpp"

using namespace unictrl;

namespace {

AttentionWeights random_weights(int dim, int heads, uint64_t seed) {
    AttentionWeights w;
    const float s = 1.0f / std::sqrt(float(dim));
    w.wq = oracle::random_tensor({dim, dim}, seed, s);
    w.wk = oracle::random_tensor({dim, dim}, seed + 1, s);
    w.wv = oracle::random_tensor({dim, dim}, seed + 2, s);
    w.wo = oracle::random_tensor({dim, dim}, seed + 3, s);
    w.head_count = heads;
    return w;
}

ControlHook self_hook(AttnControlMode mode, const Tensor* inject = nullptr) {
    return ControlHook{AttentionSiteKind::self_attention, mode, inject};
}

ControlHook cross_hook(const Tensor* inject = nullptr) {
    return ControlHook{AttentionSiteKind::cross_attention, AttnControlMode::vanilla, inject};
}

}  // namespace

// ============================================================================
// attention core
// ============================================================================

TEST(Attention, SingleKeyValueTokenReturnsThatValue) {
    Tensor q = oracle::random_tensor({5, 8}, 1);
    Tensor k = oracle::random_tensor({1, 8}, 2);
    Tensor v = oracle::random_tensor({1, 8}, 3);
    Tensor out = attention(q, k, v);
    for (int i = 0; i < 5; ++i) {
        for (int d = 0; d < 8; ++d) {
            EXPECT_NEAR(out.at({i, d}), v.at({0, d}), 1e-6);
        }
    }
}

TEST(Attention, MatchesBruteForceOracle) {
    Tensor q = oracle::random_tensor({2, 4, 8}, 11);
    Tensor k = oracle::random_tensor({2, 4, 8}, 12);
    Tensor v = oracle::random_tensor({2, 4, 8}, 13);
    Tensor out = attention(q, k, v);
    for (int h = 0; h < 2; ++h) {
        auto ref = oracle::attention_2d(q.data() + h * 32, k.data() + h * 32, v.data() + h * 32,
                                        4, 4, 8, 8);
        for (int i = 0; i < 32; ++i) {
            EXPECT_NEAR(double(out.data()[h * 32 + i]), ref[size_t(i)], 1e-5);
        }
    }
}

TEST(Attention, SharpenedSoftmaxPicksTheMatchingRow) {
    // One key aligned with the query and scaled up dominates the softmax.
    Tensor q({1, 4}, {30.0f, 0.0f, 0.0f, 0.0f});
    Tensor k({3, 4}, {30.0f, 0, 0, 0, /**/ 0, 1, 0, 0, /**/ 0, 0, 1, 0});
    Tensor v = oracle::random_tensor({3, 4}, 14);
    Tensor out = attention(q, k, v);
    auto ref = oracle::attention_2d(q.data(), k.data(), v.data(), 1, 3, 4, 4);
    for (int d = 0; d < 4; ++d) {
        EXPECT_NEAR(double(out.at({0, d})), ref[size_t(d)], 1e-5);
        EXPECT_NEAR(out.at({0, d}), v.at({0, d}), 1e-3);
    }
}

TEST(Attention, HeadDimMismatchThrows) {
    Tensor q = oracle::random_tensor({4, 8}, 15);
    Tensor k = oracle::random_tensor({4, 6}, 16);
    Tensor v = oracle::random_tensor({4, 6}, 17);
    EXPECT_THROW(attention(q, k, v), Error);
}

// ============================================================================
// self-attention block and its control modes
// ============================================================================

TEST(SelfAttention, SingleFrameSacIsBitIdenticalToVanilla) {
    Tensor z = oracle::random_tensor({1, 6, 16}, 21);
    auto w = random_weights(16, 4, 22);
    Tensor vanilla = self_attention_block(z, w, self_hook(AttnControlMode::vanilla));
    Tensor sac = self_attention_block(z, w, self_hook(AttnControlMode::sac));
    EXPECT_TRUE(vanilla.bit_equal(sac));
}

TEST(SelfAttention, IdenticalFramesMakeSacMatchVanilla) {
    Tensor one = oracle::random_tensor({1, 6, 16}, 23);
    Tensor z({4, 6, 16});
    for (int f = 0; f < 4; ++f) {
        std::copy(one.data(), one.data() + 96, z.mutable_data() + f * 96);
    }
    auto w = random_weights(16, 2, 24);
    Tensor vanilla = self_attention_block(z, w, self_hook(AttnControlMode::vanilla));
    Tensor sac = self_attention_block(z, w, self_hook(AttnControlMode::sac));
    EXPECT_LT(oracle::max_abs_diff(vanilla, sac), 1e-6);
}

TEST(SelfAttention, SacConsumesFrameZeroProjectionsExactly) {
    Tensor z = oracle::random_tensor({3, 5, 16}, 25);
    auto w = random_weights(16, 4, 26);
    BlockTaps taps;
    self_attention_block(z, w, self_hook(AttnControlMode::sac), &taps);

    ASSERT_TRUE(taps.k_from_frame0);
    ASSERT_TRUE(taps.v_from_frame0);
    ASSERT_EQ(taps.k_used.shape(), (Shape{1, 5, 16}));

    // Recompute frame 0's projections independently and compare bit-exactly.
    Tensor frame0({1, 5, 16}, std::vector<float>(z.data(), z.data() + 80));
    Tensor k0 = matmul(frame0, w.wk);
    Tensor v0 = matmul(frame0, w.wv);
    EXPECT_TRUE(taps.k_used.bit_equal(k0));
    EXPECT_TRUE(taps.v_used.bit_equal(v0));
}

TEST(SelfAttention, ValueOnlyMismatchKeepsPerFrameKeys) {
    Tensor z = oracle::random_tensor({3, 5, 16}, 27);
    auto w = random_weights(16, 4, 28);
    BlockTaps taps;
    self_attention_block(z, w, self_hook(AttnControlMode::sac_value_only), &taps);
    EXPECT_FALSE(taps.k_from_frame0);
    EXPECT_TRUE(taps.v_from_frame0);
    EXPECT_EQ(taps.k_used.shape(), (Shape{3, 5, 16}));
    EXPECT_EQ(taps.v_used.shape(), (Shape{1, 5, 16}));
}

TEST(SelfAttention, CapturedQueryMatchesIndependentProjection) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 29);
    auto w = random_weights(16, 2, 30);
    BlockTaps taps;
    self_attention_block(z, w, self_hook(AttnControlMode::vanilla), &taps);
    Tensor q = matmul(z, w.wq);
    EXPECT_TRUE(taps.q_computed.bit_equal(q));
}

TEST(SelfAttention, InjectionShapeMismatchThrows) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 31);
    auto w = random_weights(16, 2, 32);
    Tensor wrong = oracle::random_tensor({2, 5, 16}, 33);
    EXPECT_THROW(self_attention_block(z, w, self_hook(AttnControlMode::vanilla, &wrong)), Error);
}

TEST(SelfAttention, QueryInjectionControlsSpatialArgument) {
    // With fixed K and V, identical injected queries give identical outputs
    // and different injected queries change the output.
    Tensor z = oracle::random_tensor({2, 4, 16}, 34);
    auto w = random_weights(16, 2, 35);
    Tensor qa = oracle::random_tensor({2, 4, 16}, 36);
    Tensor qb = oracle::random_tensor({2, 4, 16}, 37);
    Tensor out_a1 = self_attention_block(z, w, self_hook(AttnControlMode::vanilla, &qa));
    Tensor out_a2 = self_attention_block(z, w, self_hook(AttnControlMode::vanilla, &qa));
    Tensor out_b = self_attention_block(z, w, self_hook(AttnControlMode::vanilla, &qb));
    EXPECT_TRUE(out_a1.bit_equal(out_a2));
    EXPECT_GT(oracle::max_abs_diff(out_a1, out_b), 1e-4);
}

TEST(SelfAttention, CaptureStillReportsComputedQueryUnderInjection) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 38);
    auto w = random_weights(16, 2, 39);
    Tensor injected = oracle::random_tensor({2, 4, 16}, 40);
    BlockTaps taps;
    self_attention_block(z, w, self_hook(AttnControlMode::vanilla, &injected), &taps);
    EXPECT_TRUE(taps.q_computed.bit_equal(matmul(z, w.wq)));
    EXPECT_TRUE(taps.q_used.bit_equal(injected));
}

// ============================================================================
// cross-attention block
// ============================================================================

TEST(CrossAttention, SingleConditionTokenDrivesEveryPosition) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 41);
    Tensor cond = oracle::random_tensor({1, 16}, 42);
    auto w = random_weights(16, 2, 43);
    Tensor out = cross_attention_block(z, cond, w, cross_hook());
    // Softmax over one token is 1, so the context is that token's value
    // projection for every position; then the output projection applies.
    Tensor v = matmul(reshape(cond, {1, 1, 16}), w.wv);
    Tensor expected_row = matmul(v, w.wo);
    for (int f = 0; f < 2; ++f) {
        for (int t = 0; t < 4; ++t) {
            for (int d = 0; d < 16; ++d) {
                EXPECT_NEAR(out.at({f, t, d}), expected_row.at({0, 0, d}), 1e-5);
            }
        }
    }
}

TEST(CrossAttention, SelfInjectionIsANoOp) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 44);
    Tensor cond = oracle::random_tensor({3, 16}, 45);
    auto w = random_weights(16, 2, 46);
    BlockTaps taps;
    Tensor vanilla = cross_attention_block(z, cond, w, cross_hook(), &taps);
    Tensor q = taps.q_computed;
    Tensor injected = cross_attention_block(z, cond, w, cross_hook(&q));
    EXPECT_TRUE(vanilla.bit_equal(injected));
}

TEST(CrossAttention, DifferentConditionsProduceDifferentOutputs) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 47);
    auto w = random_weights(16, 2, 48);
    Tensor cond_a = oracle::random_tensor({3, 16}, 49);
    Tensor cond_b = oracle::random_tensor({3, 16}, 50);
    Tensor out_a = cross_attention_block(z, cond_a, w, cross_hook());
    Tensor out_b = cross_attention_block(z, cond_b, w, cross_hook());
    EXPECT_GT(oracle::max_abs_diff(out_a, out_b), 1e-4);
}

TEST(CrossAttention, FrameZeroModesAreRejected) {
    Tensor z = oracle::random_tensor({2, 4, 16}, 51);
    Tensor cond = oracle::random_tensor({3, 16}, 52);
    auto w = random_weights(16, 2, 53);
    ControlHook hook{AttentionSiteKind::cross_attention, AttnControlMode::sac, nullptr};
    EXPECT_THROW(cross_attention_block(z, cond, w, hook), Error);
}

// ============================================================================
// temporal attention
// ============================================================================

TEST(TemporalAttention, SingleFrameEqualsValuePath) {
    Tensor z = oracle::random_tensor({1, 4, 16}, 61);
    auto w = random_weights(16, 2, 62);
    Tensor out = temporal_attention_block(z, w);
    // F = 1: attention weight is 1, so out = wo(wv(z)) per token.
    Tensor expected = matmul(matmul(z, w.wv), w.wo);
    EXPECT_LT(oracle::max_abs_diff(out, expected), 1e-5);
}

TEST(TemporalAttention, IdenticalFramesStayIdentical) {
    Tensor one = oracle::random_tensor({1, 4, 16}, 63);
    Tensor z({3, 4, 16});
    for (int f = 0; f < 3; ++f) {
        std::copy(one.data(), one.data() + 64, z.mutable_data() + f * 64);
    }
    auto w = random_weights(16, 2, 64);
    Tensor out = temporal_attention_block(z, w);
    for (int f = 1; f < 3; ++f) {
        for (int i = 0; i < 64; ++i) {
            EXPECT_NEAR(out.data()[f * 64 + i], out.data()[i], 1e-6);
        }
    }
}

TEST(TemporalAttention, MatchesPerTokenBruteForce) {
    const int F = 4, T = 3, D = 16, H = 2, hd = D / H;
    Tensor z = oracle::random_tensor({F, T, D}, 65);
    auto w = random_weights(D, H, 66);
    Tensor out = temporal_attention_block(z, w);

    Tensor q = matmul(z, w.wq);
    Tensor k = matmul(z, w.wk);
    Tensor v = matmul(z, w.wv);
    for (int t = 0; t < T; ++t) {
        // Gather the per-frame rows of this token, per head.
        std::vector<float> merged(size_t(F) * D);
        for (int h = 0; h < H; ++h) {
            std::vector<float> qh(size_t(F) * hd), kh(size_t(F) * hd), vh(size_t(F) * hd);
            for (int f = 0; f < F; ++f) {
                for (int d = 0; d < hd; ++d) {
                    qh[size_t(f * hd + d)] = q.at({f, t, h * hd + d});
                    kh[size_t(f * hd + d)] = k.at({f, t, h * hd + d});
                    vh[size_t(f * hd + d)] = v.at({f, t, h * hd + d});
                }
            }
            auto ref = oracle::attention_2d(qh.data(), kh.data(), vh.data(), F, F, hd, hd);
            for (int f = 0; f < F; ++f) {
                for (int d = 0; d < hd; ++d) {
                    merged[size_t(f * D + h * hd + d)] = float(ref[size_t(f * hd + d)]);
                }
            }
        }
        Tensor ctx({F, 1, D}, merged);
        Tensor expected = matmul(ctx, w.wo);
        for (int f = 0; f < F; ++f) {
            for (int d = 0; d < D; ++d) {
                EXPECT_NEAR(out.at({f, t, d}), expected.at({f, 0, d}), 1e-5)
                    << "f=" << f << " t=" << t << " d=" << d;
            }
        }
    }
}
