#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "unictrl/autograd.hpp"

using namespace unictrl;

namespace {

// Checks d(mean of f(params))/d(param coords) against central differences.
// Loss noise in float32 puts a floor under how small a difference the probe
// can resolve; the absolute term accounts for it.
void check_gradients(const std::vector<Tensor>& inputs,
                     const std::function<GradTape::Var(GradTape&, std::vector<GradTape::Var>&)>& f,
                     double h = 1e-3, double rel_tol = 1e-3, double abs_tol = 2e-4) {
    std::vector<Tensor> work;
    for (const Tensor& t : inputs) work.push_back(t.clone());

    auto loss_value = [&]() {
        GradTape tape;
        std::vector<GradTape::Var> vars;
        for (const Tensor& t : work) vars.push_back(tape.parameter(t.clone()));
        return double(tape.value(f(tape, vars)).data()[0]);
    };

    GradTape tape;
    std::vector<GradTape::Var> vars;
    for (const Tensor& t : work) vars.push_back(tape.parameter(t.clone()));
    auto loss = f(tape, vars);
    std::vector<Tensor> grads = tape.gradients(loss);

    // The probe cannot resolve differences below ulp(loss)/(2h).
    const double floor = abs_tol * std::max(1.0, std::abs(double(tape.value(loss).data()[0])));
    for (size_t p = 0; p < work.size(); ++p) {
        for (int64_t i = 0; i < work[p].numel(); ++i) {
            const double fd =
                oracle::central_difference(loss_value, work[p].mutable_data()[i], h);
            const double an = double(grads[p].data()[i]);
            const double tol = rel_tol * std::max(std::abs(fd), std::abs(an)) + floor;
            EXPECT_NEAR(an, fd, tol) << "param " << p << " coord " << i;
        }
    }
}

}  // namespace

TEST(Autograd, ProductRule) {
    GradTape tape;
    auto x = tape.parameter(Tensor::scalar(3.0f));
    auto y = tape.parameter(Tensor::scalar(5.0f));
    auto loss = tape.mul(x, y);
    auto grads = tape.gradients(loss);
    EXPECT_FLOAT_EQ(grads[0].data()[0], 5.0f);
    EXPECT_FLOAT_EQ(grads[1].data()[0], 3.0f);
}

TEST(Autograd, ConstantLossGivesZeroGradient) {
    GradTape tape;
    auto theta = tape.parameter(oracle::random_tensor({3, 3}, 7));
    auto c = tape.constant(Tensor::scalar(2.0f));
    auto loss = tape.mul(c, c);
    auto grads = tape.gradients(loss);
    (void)theta;
    for (int64_t i = 0; i < grads[0].numel(); ++i) EXPECT_EQ(grads[0].data()[i], 0.0f);
}

TEST(Autograd, NonScalarLossThrows) {
    GradTape tape;
    auto x = tape.parameter(oracle::random_tensor({4}, 8));
    EXPECT_THROW(tape.gradients(x), Error);
}

TEST(Autograd, AddSubMulScale) {
    check_gradients({oracle::random_tensor({3, 4}, 10), oracle::random_tensor({3, 4}, 11)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto s = t.sub(t.add(v[0], v[1]), t.scale(v[1], 0.7f));
                        return t.mean_all(t.mul(s, s));
                    });
}

TEST(Autograd, AddBias) {
    check_gradients({oracle::random_tensor({3, 5}, 12), oracle::random_tensor({5}, 13)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.add_bias(v[0], v[1]);
                        return t.mean_all(t.mul(y, y));
                    });
}

TEST(Autograd, MatmulBothSides) {
    check_gradients({oracle::random_tensor({4, 3}, 14), oracle::random_tensor({3, 5}, 15)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.matmul(v[0], v[1]);
                        return t.mean_all(t.mul(y, y));
                    });
}

TEST(Autograd, MatmulBatchedWithSharedWeight) {
    check_gradients({oracle::random_tensor({2, 4, 3}, 16), oracle::random_tensor({3, 4}, 17)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.matmul(v[0], v[1]);
                        return t.mean_all(t.mul(y, y));
                    });
}

TEST(Autograd, MatmulNt) {
    check_gradients({oracle::random_tensor({2, 4, 6}, 18), oracle::random_tensor({2, 5, 6}, 19)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.matmul_nt(v[0], v[1]);
                        return t.mean_all(t.mul(y, y));
                    });
}

TEST(Autograd, MatmulNtBroadcast) {
    check_gradients({oracle::random_tensor({3, 4, 6}, 20), oracle::random_tensor({1, 5, 6}, 21)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.matmul_nt(v[0], v[1]);
                        return t.mean_all(t.mul(y, y));
                    });
}

TEST(Autograd, SoftmaxLast) {
    check_gradients({oracle::random_tensor({3, 6}, 22)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.softmax_last(v[0]);
                        auto w = t.constant(oracle::random_tensor({3, 6}, 23));
                        return t.mean_all(t.mul(y, w));
                    });
}

TEST(Autograd, Silu) {
    check_gradients({oracle::random_tensor({4, 4}, 24)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.silu(v[0]);
                        return t.mean_all(t.mul(y, y));
                    });
}

TEST(Autograd, RmsNorm) {
    check_gradients({oracle::random_tensor({3, 8}, 25), oracle::random_tensor({8}, 26, 0.5f)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.rmsnorm(v[0], v[1]);
                        auto w = t.constant(oracle::random_tensor({3, 8}, 27));
                        return t.mean_all(t.mul(y, w));
                    });
}

TEST(Autograd, PermuteAndReshape) {
    auto map = std::make_shared<const std::vector<int64_t>>([] {
        std::vector<int64_t> m(12);
        for (int64_t i = 0; i < 12; ++i) m[size_t(i)] = (i * 5) % 12;
        return m;
    }());
    check_gradients({oracle::random_tensor({3, 4}, 28)},
                    [map](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.permute(v[0], map, {12});
                        auto z = t.reshape(y, {4, 3});
                        return t.mean_all(t.mul(z, z));
                    });
}

TEST(Autograd, GatherRowsAccumulatesDuplicates) {
    check_gradients({oracle::random_tensor({6, 4}, 29)},
                    [](GradTape& t, std::vector<GradTape::Var>& v) {
                        auto y = t.gather_rows(v[0], {1, 3, 1, 5});
                        return t.mean_all(t.mul(y, y));
                    });
}

// Random two-layer network against finite differences.
TEST(Autograd, TwoLayerNetworkMatchesFiniteDifferences) {
    Tensor x = oracle::random_tensor({4, 6}, 30);
    Tensor target = oracle::random_tensor({4, 2}, 31);
    check_gradients(
        {oracle::random_tensor({6, 8}, 32, 0.5f), oracle::random_tensor({8}, 33, 0.1f),
         oracle::random_tensor({8, 2}, 34, 0.5f), oracle::random_tensor({2}, 35, 0.1f)},
        [x, target](GradTape& t, std::vector<GradTape::Var>& v) {
            auto h = t.silu(t.add_bias(t.matmul(t.constant(x), v[0]), v[1]));
            auto y = t.add_bias(t.matmul(h, v[2]), v[3]);
            auto d = t.sub(y, t.constant(target));
            return t.mean_all(t.mul(d, d));
        });
}

TEST(Autograd, DisconnectedParameterGetsZeroGradient) {
    GradTape tape;
    auto used = tape.parameter(oracle::random_tensor({2, 2}, 36));
    auto unused = tape.parameter(oracle::random_tensor({3, 3}, 37));
    auto loss = tape.mean_all(tape.mul(used, used));
    auto grads = tape.gradients(loss);
    ASSERT_EQ(grads.size(), 2u);
    for (int64_t i = 0; i < grads[1].numel(); ++i) EXPECT_EQ(grads[1].data()[i], 0.0f);
    (void)unused;
}
