#ifndef UNICTRL_DIFFUSION_HPP
#define UNICTRL_DIFFUSION_HPP

#include <cmath>
#include <vector>

#include "unictrl/tensor.hpp"

namespace unictrl {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

// Linear beta schedule with cumulative signal retention alpha_bar, indexed so
// that alpha_bar[0] = 1 (the clean endpoint) and alpha_bar[t] covers steps
// 1..t. Products are accumulated in double and stored as float.
struct NoiseSchedule {
    int total_steps = 0;             // T
    std::vector<float> beta;         // size T, beta[t-1] is the step-t variance
    std::vector<float> alpha_bar;    // size T+1

    float alpha_bar_at(int t) const {
        if (t < 0 || t > total_steps) {
            fail(ErrorCategory::data, "schedule: timestep " + std::to_string(t) +
                                          " outside [0," + std::to_string(total_steps) + "]");
        }
        return alpha_bar[size_t(t)];
    }

    // DDIM stochastic width for the jump t -> t_prev at the given eta.
    double sigma(int t, int t_prev, double eta) const {
        const double ab_t = alpha_bar_at(t);
        const double ab_prev = alpha_bar_at(t_prev);
        if (t == t_prev) return 0.0;
        const double ratio = (1.0 - ab_prev) / (1.0 - ab_t);
        return eta * std::sqrt(ratio) * std::sqrt(1.0 - ab_t / ab_prev);
    }
};

inline NoiseSchedule make_schedule(int total_steps, float beta_start, float beta_end) {
    if (total_steps < 1) fail_config("schedule: step count must be >= 1");
    if (!(beta_start > 0.0f) || !(beta_start <= beta_end) || !(beta_end < 1.0f)) {
        fail_config("schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.total_steps = total_steps;
    s.beta.resize(size_t(total_steps));
    s.alpha_bar.resize(size_t(total_steps) + 1);
    s.alpha_bar[0] = 1.0f;
    double prod = 1.0;
    for (int t = 0; t < total_steps; ++t) {
        const double frac = total_steps == 1 ? 0.0 : double(t) / double(total_steps - 1);
        const double b = double(beta_start) + (double(beta_end) - double(beta_start)) * frac;
        s.beta[size_t(t)] = float(b);
        prod *= 1.0 - b;
        s.alpha_bar[size_t(t) + 1] = float(prod);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Forward process and sampling step
// ---------------------------------------------------------------------------

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps. t = 0 returns z0
// exactly (alpha_bar_0 = 1).
inline Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& s) {
    if (!z0.same_shape(eps)) {
        fail_shape("add_noise: z0 " + shape_str(z0.shape()) + " vs eps " +
                   shape_str(eps.shape()));
    }
    const double ab = s.alpha_bar_at(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor out(z0.shape());
    const float* pz = z0.data();
    const float* pe = eps.data();
    float* po = out.mutable_data();
    // Elementwise math in double, storage in float: t = 0 returns z0 bit-exactly.
    for (int64_t i = 0; i < out.numel(); ++i) {
        po[i] = float(a * double(pz[i]) + b * double(pe[i]));
    }
    check_finite(out, "add_noise");
    return out;
}

// One reverse jump t -> t_prev:
//   z_prev = sqrt(ab_prev) * pred_z0 + sqrt(1 - ab_prev - sigma^2) * eps_hat
//            + sigma * noise
// with pred_z0 = (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t). noise is
// required when sigma > 0 and ignored otherwise.
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                        const NoiseSchedule& s, double eta = 0.0,
                        const Tensor* noise = nullptr) {
    if (!z_t.same_shape(eps_hat)) {
        fail_shape("ddim_step: z_t " + shape_str(z_t.shape()) + " vs eps_hat " +
                   shape_str(eps_hat.shape()));
    }
    if (t_prev < 0 || t < t_prev) {
        fail(ErrorCategory::data, "ddim_step: need t >= t_prev >= 0, got t=" +
                                      std::to_string(t) + " t_prev=" + std::to_string(t_prev));
    }
    const double ab_t = s.alpha_bar_at(t);
    const double ab_prev = s.alpha_bar_at(t_prev);
    const double sigma = s.sigma(t, t_prev, eta);
    const double dir_sq = 1.0 - ab_prev - sigma * sigma;
    if (dir_sq < -1e-12) {
        fail(ErrorCategory::data, "ddim_step: sigma too large for the jump (eta out of range)");
    }
    if (sigma > 0.0 && noise == nullptr) {
        fail(ErrorCategory::data, "ddim_step: sigma > 0 requires a noise tensor");
    }
    if (noise && sigma > 0.0 && !noise->same_shape(z_t)) {
        fail_shape("ddim_step: noise shape mismatch");
    }

    const double a_t = std::sqrt(ab_t);
    const double b_t = std::sqrt(1.0 - ab_t);
    const double a_prev = std::sqrt(ab_prev);
    const double dir = std::sqrt(std::max(0.0, dir_sq));

    Tensor out(z_t.shape());
    const float* pz = z_t.data();
    const float* pe = eps_hat.data();
    const float* pn = (noise && sigma > 0.0) ? noise->data() : nullptr;
    float* po = out.mutable_data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double pred_z0 = (double(pz[i]) - b_t * double(pe[i])) / a_t;
        double v = a_prev * pred_z0 + dir * double(pe[i]);
        if (pn) v += sigma * double(pn[i]);
        po[i] = float(v);
    }
    check_finite(out, "ddim_step");
    return out;
}

// Classifier-free guidance: eps_uncond + w * (eps_cond - eps_uncond).
inline Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, float w) {
    if (!eps_cond.same_shape(eps_uncond)) {
        fail_shape("cfg_combine: shape mismatch");
    }
    Tensor out(eps_cond.shape());
    const float* pc = eps_cond.data();
    const float* pu = eps_uncond.data();
    float* po = out.mutable_data();
    // Double internally: w = 1 returns eps_cond exactly and w = 0 eps_uncond.
    const double wd = double(w);
    for (int64_t i = 0; i < out.numel(); ++i) {
        po[i] = float(double(pu[i]) + wd * (double(pc[i]) - double(pu[i])));
    }
    check_finite(out, "cfg_combine");
    return out;
}

// ---------------------------------------------------------------------------
// Sampler configuration
// ---------------------------------------------------------------------------

struct SamplerConfig {
    int steps = 25;       // N
    double eta = 0.0;
    float guidance = 7.5f;
    int schedule_T = 1000;
    float beta_start = 1e-4f;
    float beta_end = 2e-2f;

    void validate() const {
        if (steps < 1) fail_config("sampler: steps must be >= 1");
        if (eta < 0.0 || eta > 1.0) fail_config("sampler: eta must lie in [0,1]");
        if (guidance < 0.0f) fail_config("sampler: guidance must be >= 0");
        if (schedule_T < steps) fail_config("sampler: schedule_T must be >= steps");
    }

    // Strictly decreasing timestep sequence tau_0 > ... > tau_N with N+1
    // entries; tau_N = 0 is the clean endpoint. The first entry sits one
    // schedule stride below T (plus one), so the window threshold at exactly
    // T is reachable only when requested explicitly.
    std::vector<int> timesteps() const {
        validate();
        std::vector<int> taus(size_t(steps) + 1);
        for (int n = 0; n < steps; ++n) {
            int tau = schedule_T - (schedule_T / steps) * (n + 1) + 1;
            taus[size_t(n)] = std::max(1, tau);
        }
        taus[size_t(steps)] = 0;
        for (size_t i = 1; i < taus.size(); ++i) {
            if (taus[i] >= taus[i - 1]) {
                fail_config("sampler: timestep sequence is not strictly decreasing; "
                            "use fewer steps or a longer schedule");
            }
        }
        return taus;
    }
};

}  // namespace unictrl

#endif
