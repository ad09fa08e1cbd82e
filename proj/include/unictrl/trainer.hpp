#ifndef UNICTRL_TRAINER_HPP
#define UNICTRL_TRAINER_HPP

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unictrl/autograd.hpp"
#include "unictrl/denoiser.hpp"
#include "unictrl/diffusion.hpp"
#include "unictrl/sprites.hpp"
#include "unictrl/tensor.hpp"
#include "unictrl/threading.hpp"

namespace unictrl {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 4;
    float learning_rate = 0.1f;
    int schedule_T = 1000;
    float beta_start = 1e-4f;
    float beta_end = 2e-2f;
    float null_cond_prob = 0.1f;  // guidance-free conditioning dropout
    uint64_t seed = 0;
    std::string out_path = "checkpoint.uctl";
    int log_every = 100;

    void validate() const {
        if (steps < 1) fail_config("train: step count must be >= 1");
        if (batch_size < 1) fail_config("train: batch size must be >= 1");
        if (!(learning_rate > 0.0f)) fail_config("train: learning rate must be > 0");
        if (schedule_T < 1) fail_config("train: schedule_T must be >= 1");
        if (null_cond_prob < 0.0f || null_cond_prob > 1.0f) {
            fail_config("train: null-condition probability must lie in [0,1]");
        }
    }
};

struct TrainExample {
    Tensor latent;  // [F, C, H, W] clean video latent
    std::string prompt;
};

// Noise-prediction loss and parameter gradients for one example with fixed
// draws. The noisy input is built by the same add_noise used everywhere else.
inline std::pair<float, std::vector<Tensor>> noise_prediction_loss_grads(
    const DenoiserModel& m, const Tensor& latent, const TextCondition& cond, int t,
    const Tensor& eps, const NoiseSchedule& sched) {
    GradTape tape;
    TapeEngine eng{&tape};
    auto pv = lift_params_trainable(tape, m);
    auto z_t = tape.constant(add_noise(latent, eps, t, sched));
    const std::vector<ControlHook> hooks = vanilla_hooks(m.config);
    auto eps_hat = denoiser_forward(eng, m, pv, z_t, cond, t, hooks, nullptr, nullptr);
    auto diff = tape.sub(eps_hat, tape.constant(eps));
    auto loss = tape.mean_all(tape.mul(diff, diff));
    float loss_value = tape.value(loss).data()[0];
    return {loss_value, tape.gradients(loss)};
}

// One gradient-descent update over the batch. Per-example timesteps, noise
// and conditioning dropout are drawn from the stream in example order before
// any parallel work, so results are independent of the thread count.
inline float training_step(DenoiserModel& m, std::span<const TrainExample> batch,
                           const NoiseSchedule& sched, RngStream& stream, float learning_rate,
                           float null_cond_prob) {
    if (batch.empty()) fail(ErrorCategory::data, "training_step: batch must be nonempty");
    const int B = int(batch.size());

    struct Draw {
        int t;
        bool drop;
        Tensor eps;
    };
    std::vector<Draw> draws;
    draws.reserve(size_t(B));
    for (int i = 0; i < B; ++i) {
        Draw d;
        d.t = int(next_int(stream, 1, sched.total_steps));
        d.drop = next_unit(stream) < double(null_cond_prob);
        d.eps = gaussian(batch[size_t(i)].latent.shape(), stream);
        draws.push_back(std::move(d));
    }

    std::vector<float> losses(static_cast<size_t>(B), 0.0f);
    std::vector<std::vector<Tensor>> grads(static_cast<size_t>(B));
    parallel_for(B, [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
            const TrainExample& ex = batch[size_t(i)];
            const Draw& d = draws[size_t(i)];
            TextCondition cond = d.drop ? m.null_condition() : m.embed_text(ex.prompt);
            auto [loss, g] = noise_prediction_loss_grads(m, ex.latent, cond, d.t, d.eps, sched);
            losses[size_t(i)] = loss;
            grads[size_t(i)] = std::move(g);
        }
    }, 1);

    const float inv_b = 1.0f / float(B);
    for (size_t p = 0; p < m.params.size(); ++p) {
        Tensor updated = m.params[p].clone();
        float* w = updated.mutable_data();
        for (int i = 0; i < B; ++i) {
            const float* g = grads[size_t(i)][p].data();
            const float step = learning_rate * inv_b;
            for (int64_t j = 0; j < updated.numel(); ++j) w[j] -= step * g[j];
        }
        check_finite(updated, "training_step update");
        m.params[p] = std::move(updated);
    }

    float mean_loss = 0.0f;
    for (float l : losses) mean_loss += l;
    return mean_loss * inv_b;
}

struct TrainResult {
    DenoiserModel model;
    std::vector<float> loss_history;
    float first_window_mean = 0.0f;  // mean loss over the first log window
    float last_window_mean = 0.0f;   // mean loss over the last log window
};

// Trains a fresh model on randomly sampled sprite clips. Fully deterministic
// for a fixed config.
inline TrainResult train(const TrainConfig& tc, const DenoiserConfig& model_cfg,
                         const std::function<void(int, float)>& progress = nullptr) {
    tc.validate();
    model_cfg.validate();
    if (model_cfg.height * kPixelsPerCell != kSpriteCanvas ||
        model_cfg.width * kPixelsPerCell != kSpriteCanvas) {
        fail_config("train: model latent grid must decode to the sprite canvas size");
    }

    TrainResult result;
    result.model = DenoiserModel::random_init(model_cfg, tc.seed);
    const NoiseSchedule sched = make_schedule(tc.schedule_T, tc.beta_start, tc.beta_end);
    RngStream data_stream = derive_stream(tc.seed, rng_domains::train_data);
    RngStream step_stream = derive_stream(tc.seed, rng_domains::train_step);

    const int window = std::min(tc.steps, 100);
    for (int step = 0; step < tc.steps; ++step) {
        std::vector<TrainExample> batch;
        batch.reserve(size_t(tc.batch_size));
        for (int i = 0; i < tc.batch_size; ++i) {
            SpriteSpec spec = random_sprite_spec(data_stream);
            SpriteVideo video = generate_sprite_video(spec, model_cfg.frames);
            batch.push_back({std::move(video.latent), std::move(video.prompt)});
        }
        const float loss = training_step(result.model, batch, sched, step_stream,
                                         tc.learning_rate, tc.null_cond_prob);
        result.loss_history.push_back(loss);
        if (progress && ((step + 1) % tc.log_every == 0 || step + 1 == tc.steps)) {
            progress(step + 1, loss);
        }
    }

    auto window_mean = [&](int begin) {
        float s = 0.0f;
        for (int i = begin; i < begin + window; ++i) s += result.loss_history[size_t(i)];
        return s / float(window);
    };
    result.first_window_mean = window_mean(0);
    result.last_window_mean = window_mean(tc.steps - window);
    return result;
}

}  // namespace unictrl

#endif
