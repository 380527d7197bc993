#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "raediff/rng.hpp"
#include "raediff/schedule.hpp"
#include "raediff/tensor.hpp"

namespace raediff {

/// Parameters of the trigger-biased terminal distribution N(bias, gamma^2 I)
/// with bias = (1 - gamma) * trigger.
struct BgdParams {
    ImageTensor trigger;  // scaled to [-1, 1]
    double gamma = 1.0;   // in [0, 1]; gamma = 1 recovers the standard process
    ImageTensor bias;     // (1 - gamma) * trigger
};

/// Global min-max affine map of an arbitrary-range image onto [-1, 1].
/// A constant image maps to all zeros. Scaling is global (not per channel)
/// so the trigger's spatial structure is preserved.
inline ImageTensor scale_trigger(const ImageTensor& raw) {
    if (raw.empty())
        throw std::invalid_argument("scale_trigger: empty tensor");
    const auto [lo_it, hi_it] = std::minmax_element(raw.values.begin(), raw.values.end());
    const double lo = *lo_it, hi = *hi_it;
    ImageTensor out(raw.height, raw.width, raw.channels);
    if (hi > lo) {
        const double scale = 2.0 / (hi - lo);
        for (std::size_t i = 0; i < raw.size(); ++i)
            out.values[i] = (raw.values[i] - lo) * scale - 1.0;
    }
    return out;
}

inline BgdParams make_bgd(ImageTensor trigger, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw std::invalid_argument("make_bgd: gamma must lie in [0, 1]");
    if (trigger.empty())
        throw std::invalid_argument("make_bgd: empty trigger");
    for (double v : trigger.values)
        if (!(v >= -1.0 && v <= 1.0))
            throw std::invalid_argument("make_bgd: trigger values must lie in [-1, 1]");
    BgdParams p;
    p.gamma = gamma;
    p.bias = trigger;
    for (double& v : p.bias.values) v *= (1.0 - gamma);
    p.trigger = std::move(trigger);
    return p;
}

/// Closed-form biased forward marginal:
///   x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) gamma eps + sqrt(1 - abar_t) bias.
/// Output is not clamped.
inline ImageTensor forward_diffuse(const ImageTensor& x0, int t, const ImageTensor& eps,
                                   const VarianceSchedule& sched, const BgdParams& bgd) {
    require_same_shape(x0, eps, "forward_diffuse");
    require_same_shape(x0, bgd.bias, "forward_diffuse (bias)");
    const double ab = sched.alpha_bar(t);
    const double c_x0 = std::sqrt(ab);
    const double c_noise = std::sqrt(1.0 - ab);
    ImageTensor out(x0.height, x0.width, x0.channels);
    for (std::size_t i = 0; i < x0.size(); ++i)
        out.values[i] = c_x0 * x0.values[i] +
                        c_noise * (bgd.gamma * eps.values[i] + bgd.bias.values[i]);
    return out;
}

/// One biased forward transition:
///   x_t = sqrt(alpha_t) x_{t-1} + k_t bias + sqrt(1 - alpha_t) gamma z.
inline ImageTensor forward_step(const ImageTensor& x_prev, int t, const ImageTensor& z,
                                const VarianceSchedule& sched, const BgdParams& bgd) {
    require_same_shape(x_prev, z, "forward_step");
    require_same_shape(x_prev, bgd.bias, "forward_step (bias)");
    const double c_prev = std::sqrt(sched.alpha(t));
    const double k = sched.bias_coeff(t);
    const double c_z = std::sqrt(1.0 - sched.alpha(t)) * bgd.gamma;
    ImageTensor out(x_prev.height, x_prev.width, x_prev.channels);
    for (std::size_t i = 0; i < x_prev.size(); ++i)
        out.values[i] = c_prev * x_prev.values[i] + k * bgd.bias.values[i] + c_z * z.values[i];
    return out;
}

/// Draw from the terminal distribution gamma * eps + bias, eps ~ N(0, I).
inline ImageTensor sample_terminal(int h, int w, int c, Rng& rng, const BgdParams& bgd) {
    if (h != bgd.bias.height || w != bgd.bias.width || c != bgd.bias.channels)
        throw std::invalid_argument("sample_terminal: shape does not match trigger shape");
    ImageTensor out = gaussian_tensor(h, w, c, rng);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = bgd.gamma * out.values[i] + bgd.bias.values[i];
    return out;
}

}  // namespace raediff
