#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "raediff/bgd.hpp"
#include "raediff/denoiser.hpp"
#include "raediff/rng.hpp"
#include "raediff/schedule.hpp"
#include "raediff/tensor.hpp"

namespace raediff {

/// Reverse-transition statistics: isotropic Gaussian with the given mean and
/// scalar variance.
struct PosteriorParams {
    ImageTensor mean;
    double variance_scale = 0.0;
};

struct SamplerConfig {
    int adverse_steps = 20;    // t_r, number of adversarial denoising steps
    double reverse_factor = 1.4;  // eta, stretches the restoration chain
};

/// Restoration runs round(eta * t_r) standard reverse steps (half-up; the
/// step count must be integral).
inline int restoration_steps(const SamplerConfig& config) {
    if (config.adverse_steps < 0 || !(config.reverse_factor >= 1.0))
        throw std::invalid_argument("restoration_steps: need t_r >= 0 and eta >= 1");
    return static_cast<int>(std::floor(config.reverse_factor * config.adverse_steps + 0.5));
}

/// x0 estimate from a diffused state and a noise prediction:
///   x0 = (x_t - sqrt(1-abar_t) gamma eps_hat - sqrt(1-abar_t) bias) / sqrt(abar_t).
inline ImageTensor estimate_x0(const ImageTensor& x_t, int t, const ImageTensor& eps_hat,
                               const VarianceSchedule& sched, const BgdParams& bgd) {
    require_same_shape(x_t, eps_hat, "estimate_x0");
    require_same_shape(x_t, bgd.bias, "estimate_x0 (bias)");
    const double ab = sched.alpha_bar(t);
    const double root_ab = std::sqrt(ab);
    const double root_om = std::sqrt(1.0 - ab);
    ImageTensor out(x_t.height, x_t.width, x_t.channels);
    for (std::size_t i = 0; i < x_t.size(); ++i)
        out.values[i] = (x_t.values[i] -
                         root_om * (bgd.gamma * eps_hat.values[i] + bgd.bias.values[i])) /
                        root_ab;
    return out;
}

/// Sign-flipped variant driving the adversarial generative process:
///   x0_adv = (x_t + sqrt(1-abar_t) gamma eps_hat + sqrt(1-abar_t) bias) / sqrt(abar_t).
/// Both the noise and the bias term flip sign.
inline ImageTensor adversarial_x0(const ImageTensor& x_t, int t, const ImageTensor& eps_hat,
                                  const VarianceSchedule& sched, const BgdParams& bgd) {
    require_same_shape(x_t, eps_hat, "adversarial_x0");
    require_same_shape(x_t, bgd.bias, "adversarial_x0 (bias)");
    const double ab = sched.alpha_bar(t);
    const double root_ab = std::sqrt(ab);
    const double root_om = std::sqrt(1.0 - ab);
    ImageTensor out(x_t.height, x_t.width, x_t.channels);
    for (std::size_t i = 0; i < x_t.size(); ++i)
        out.values[i] = (x_t.values[i] +
                         root_om * (bgd.gamma * eps_hat.values[i] + bgd.bias.values[i])) /
                        root_ab;
    return out;
}

/// Coefficients of the reverse-transition mean, mean = c1 x_t + c2 x0 + c3 bias.
/// Validated against exact Gaussian conditioning on the one-step transitions
/// (the radical in the printed form extends over alpha_t only).
struct PosteriorCoeffs {
    double c_xt, c_x0, c_bias, variance;
};

inline PosteriorCoeffs posterior_coeffs(int t, const VarianceSchedule& sched,
                                        const BgdParams& bgd) {
    if (t < 2 || t > sched.timesteps)
        throw std::out_of_range("posterior: t must lie in 2..T");
    const double a = sched.alpha(t);
    const double b = sched.beta(t);
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar_prev(t);
    const double k = sched.bias_coeff(t);
    PosteriorCoeffs c;
    c.c_xt = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    c.c_x0 = std::sqrt(ab_prev) * b / (1.0 - ab);
    c.c_bias = (std::sqrt(1.0 - ab_prev) * b - std::sqrt(a) * (1.0 - ab_prev) * k) / (1.0 - ab);
    c.variance = (1.0 - ab_prev) * b / (1.0 - ab) * bgd.gamma * bgd.gamma;
    return c;
}

/// Reverse-transition statistics given the current state and an x0 estimate.
/// Defined for t >= 2; the t = 1 step returns the x0 estimate directly (see
/// reverse_step).
inline PosteriorParams posterior(const ImageTensor& x_t, int t, const ImageTensor& x0_hat,
                                 const VarianceSchedule& sched, const BgdParams& bgd) {
    require_same_shape(x_t, x0_hat, "posterior");
    require_same_shape(x_t, bgd.bias, "posterior (bias)");
    const PosteriorCoeffs c = posterior_coeffs(t, sched, bgd);
    PosteriorParams p;
    p.mean = ImageTensor(x_t.height, x_t.width, x_t.channels);
    for (std::size_t i = 0; i < x_t.size(); ++i)
        p.mean.values[i] = c.c_xt * x_t.values[i] + c.c_x0 * x0_hat.values[i] +
                           c.c_bias * bgd.bias.values[i];
    p.variance_scale = c.variance;
    return p;
}

enum class ReverseMode { Standard, Adversarial };

/// One ancestral reverse step. Standard mode denoises toward the data;
/// adversarial mode uses the sign-flipped x0 estimate and steers away from
/// it. Noise is added for t > 1; the final step is deterministic.
inline ImageTensor reverse_step(const ImageTensor& x_t, int t, const NoisePredictor& predictor,
                                const VarianceSchedule& sched, const BgdParams& bgd, Rng& rng,
                                ReverseMode mode) {
    const ImageTensor eps_hat = predictor.predict(x_t, t);
    ImageTensor x0_hat = (mode == ReverseMode::Adversarial)
                             ? adversarial_x0(x_t, t, eps_hat, sched, bgd)
                             : estimate_x0(x_t, t, eps_hat, sched, bgd);
    if (!all_finite(x0_hat))
        throw NumericalError("reverse_step: non-finite x0 estimate at t=" + std::to_string(t));
    if (t == 1)
        return x0_hat;
    PosteriorParams p = posterior(x_t, t, x0_hat, sched, bgd);
    const double noise_scale = std::sqrt(p.variance_scale);
    for (double& v : p.mean.values) v += noise_scale * rng.next_gaussian();
    return p.mean;
}

struct ProtectedPair {
    ImageTensor slight_noise;     // x_sn, the graded release
    ImageTensor protected_image;  // x_p, after the adversarial chain
};

/// Diffuse x0 to the slight-noise step, then run the adversarial chain for
/// t = t_r .. 1, treating the slight-noise image as the state at t_r.
/// t_r = 0 is the degenerate no-op chain (x_p = x_sn).
inline ProtectedPair generate_protected(const ImageTensor& x0, int t_sn,
                                        const NoisePredictor& predictor,
                                        const VarianceSchedule& sched, const BgdParams& bgd,
                                        const SamplerConfig& config, Rng& rng) {
    if (t_sn < 1 || t_sn > sched.timesteps)
        throw std::out_of_range("generate_protected: t_sn outside 1..T");
    if (config.adverse_steps < 0 || config.adverse_steps > sched.timesteps)
        throw std::out_of_range("generate_protected: t_r outside 0..T");
    const ImageTensor eps = gaussian_like(x0, rng);
    ProtectedPair out;
    out.slight_noise = forward_diffuse(x0, t_sn, eps, sched, bgd);
    out.protected_image = out.slight_noise;
    for (int t = config.adverse_steps; t >= 1; --t)
        out.protected_image =
            reverse_step(out.protected_image, t, predictor, sched, bgd, rng, ReverseMode::Adversarial);
    return out;
}

/// Remove the adversarial perturbation: run round(eta * t_r) standard
/// reverse steps, treating the protected image as the state at that step.
inline ImageTensor restore(const ImageTensor& x_p, const NoisePredictor& predictor,
                           const VarianceSchedule& sched, const BgdParams& bgd,
                           const SamplerConfig& config, Rng& rng) {
    const int steps = restoration_steps(config);
    if (steps > sched.timesteps)
        throw std::out_of_range("restore: round(eta * t_r) exceeds T");
    ImageTensor x = x_p;
    for (int t = steps; t >= 1; --t)
        x = reverse_step(x, t, predictor, sched, bgd, rng, ReverseMode::Standard);
    return x;
}

/// Regular generation: draw the biased terminal state and denoise from T.
inline ImageTensor sample_from_noise(const NoisePredictor& predictor,
                                     const VarianceSchedule& sched, const BgdParams& bgd,
                                     Rng& rng, int h, int w, int c) {
    ImageTensor x = sample_terminal(h, w, c, rng, bgd);
    for (int t = sched.timesteps; t >= 1; --t)
        x = reverse_step(x, t, predictor, sched, bgd, rng, ReverseMode::Standard);
    return x;
}

}  // namespace raediff
