#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace raediff {

/// Diffusion variance schedule plus the derived bias-injection coefficients.
/// Indices are 1-based (t = 1..T) on the accessor surface. Immutable after
/// construction; safe to share read-only across workers.
struct VarianceSchedule {
    int timesteps = 0;  // T
    std::vector<double> betas;        // beta_t, noise variance added at step t
    std::vector<double> alphas;       // alpha_t = 1 - beta_t
    std::vector<double> alpha_bars;   // running product of alpha up to t
    std::vector<double> bias_coeffs;  // k_t, per-step bias injection

    double beta(int t) const { return betas[check(t) - 1]; }
    double alpha(int t) const { return alphas[check(t) - 1]; }
    double alpha_bar(int t) const { return alpha_bars[check(t) - 1]; }
    double bias_coeff(int t) const { return bias_coeffs[check(t) - 1]; }

    /// alpha_bar at t-1, with the t=1 boundary value of 1.
    double alpha_bar_prev(int t) const {
        check(t);
        return t == 1 ? 1.0 : alpha_bars[t - 2];
    }

private:
    int check(int t) const {
        if (t < 1 || t > timesteps)
            throw std::out_of_range("VarianceSchedule: t=" + std::to_string(t) +
                                    " outside 1.." + std::to_string(timesteps));
        return t;
    }
};

/// k_t via the closed-form recursion
///   k_1 = sqrt(1 - abar_1),  k_t = sqrt(1 - abar_t) - sqrt(alpha_t) * sqrt(1 - abar_{t-1}),
/// which makes the one-step transitions compose into the closed-form marginal:
///   k_t + sqrt(a_t) k_{t-1} + sqrt(a_t a_{t-1}) k_{t-2} + ... = sqrt(1 - abar_t).
/// O(T); the O(T^2) expansion of that sum lives in the tests as the oracle.
inline std::vector<double> compute_bias_coeffs(const std::vector<double>& betas,
                                               const std::vector<double>& alphas,
                                               const std::vector<double>& alpha_bars) {
    const std::size_t n = betas.size();
    if (n == 0 || alphas.size() != n || alpha_bars.size() != n)
        throw std::invalid_argument("compute_bias_coeffs: inconsistent array sizes");
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(alphas[i] - (1.0 - betas[i])) > 1e-12)
            throw std::invalid_argument("compute_bias_coeffs: alphas do not match betas");
        running *= alphas[i];
        if (std::abs(alpha_bars[i] - running) > 1e-9 * std::max(1.0, std::abs(running)))
            throw std::invalid_argument("compute_bias_coeffs: alpha_bars not the running product");
    }
    std::vector<double> k(n);
    k[0] = std::sqrt(1.0 - alpha_bars[0]);
    for (std::size_t i = 1; i < n; ++i)
        k[i] = std::sqrt(1.0 - alpha_bars[i]) - std::sqrt(alphas[i]) * std::sqrt(1.0 - alpha_bars[i - 1]);
    return k;
}

/// Linear schedule: beta interpolates from beta_min to beta_max over T steps.
inline VarianceSchedule linear_beta_schedule(int timesteps, double beta_min, double beta_max) {
    if (timesteps < 1)
        throw std::invalid_argument("linear_beta_schedule: T must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw std::invalid_argument("linear_beta_schedule: need 0 < beta_min <= beta_max < 1");

    VarianceSchedule s;
    s.timesteps = timesteps;
    s.betas.resize(timesteps);
    s.alphas.resize(timesteps);
    s.alpha_bars.resize(timesteps);
    double running = 1.0;
    for (int i = 0; i < timesteps; ++i) {
        const double b = timesteps == 1
                             ? beta_min
                             : beta_min + i * (beta_max - beta_min) / (timesteps - 1);
        s.betas[i] = b;
        s.alphas[i] = 1.0 - b;
        running *= s.alphas[i];
        s.alpha_bars[i] = running;
    }
    s.bias_coeffs = compute_bias_coeffs(s.betas, s.alphas, s.alpha_bars);
    return s;
}

}  // namespace raediff
